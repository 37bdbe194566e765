"""Sketch decoding and single-shot inference.

Input images are normalized to the model's binary convention (stroke = 0):
grayscale threshold at 0.5, polarity auto-detect (mostly-dark images are
inverted), center-pad to square and nearest-neighbor resample to the model
input size so binarity is preserved.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..mesh import Mesh
from ..networks import Generator

__all__ = ["InferenceInputError", "decode_sketch_bytes", "load_sketch_file", "infer"]


class InferenceInputError(ValueError):
    pass


def _to_model_grid(gray: np.ndarray, input_size: int) -> tuple:
    h, w = gray.shape
    resized = False
    if (h, w) != (input_size, input_size):
        side = max(h, w)
        padded = np.ones((side, side), dtype=np.float64)   # background = 1
        top = (side - h) // 2
        left = (side - w) // 2
        padded[top:top + h, left:left + w] = gray
        im = Image.fromarray((padded * 255).astype(np.uint8), mode="L")
        im = im.resize((input_size, input_size), resample=Image.NEAREST)
        gray = np.asarray(im, dtype=np.float64) / 255.0
        resized = True
    return gray, resized


def decode_sketch_bytes(data: bytes, input_size: int) -> tuple:
    """PNG/image bytes -> ({0,1} array, meta). Raises InferenceInputError."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            gray = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InferenceInputError(f"cannot decode image: {exc}")
    if gray.size == 0:
        raise InferenceInputError("empty image")
    gray, resized = _to_model_grid(gray, input_size)
    binary = (gray >= 0.5).astype(np.float64)   # dark pixels become strokes (0)
    inverted = False
    dark_fraction = float((binary == 0).mean())
    if dark_fraction > 0.5:
        binary = 1.0 - binary
        inverted = True
        dark_fraction = 1.0 - dark_fraction
    if dark_fraction == 0.0:
        raise InferenceInputError("blank sketch: no stroke pixels after thresholding")
    return binary, {"inverted": inverted, "resized": resized,
                    "stroke_fraction": dark_fraction}


def load_sketch_file(path, input_size: int) -> tuple:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InferenceInputError(f"cannot read sketch {path}: {exc}")
    return decode_sketch_bytes(data, input_size)


def infer(generator: Generator, sketch: np.ndarray, pose=None) -> Mesh:
    """Generate the mesh for a prepared binary sketch (canonical orientation).

    ``pose`` is accepted for interface symmetry; geometry is always emitted in
    the canonical frame.
    """
    del pose
    return generator.generate(sketch)
