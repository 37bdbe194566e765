"""Checkpoint archive: JSON header (config, format version, tensor manifest)
followed by raw little-endian tensor payloads. Reload is bit-exact."""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_id", "CheckpointError"]

_MAGIC = b"SK3DCKPT"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config: dict, tensors: dict) -> str:
    """Write the archive and return its content id (sha256 prefix)."""
    manifest = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype} for {name}")
        raw = arr.astype(_DTYPES[dtype], copy=False).tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": config,
        "tensors": manifest,
    }, sort_keys=True).encode()
    blob = _MAGIC + struct.pack("<Q", len(header)) + header + bytes(payload)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()[:16]


def load_checkpoint(path):
    """Returns (config dict, {name: ndarray}, checkpoint id)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{header.get('format_version')}")
    payload = blob[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return header["config"], tensors, hashlib.sha256(blob).hexdigest()[:16]


def checkpoint_id(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]
