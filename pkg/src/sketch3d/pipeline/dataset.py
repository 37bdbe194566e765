"""Procedural synthetic dataset: primitive meshes plus boundary-edge sketches.

Each entry is an OBJ mesh, a canonical-view camera pose, and a binary sketch
PNG built as the boundary of the hard-rasterized silhouette (stroke pixels
are 0, background 1). Generation is byte-reproducible under a fixed seed and
file hashes are recorded in the manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..mesh import Mesh, load_obj, make_cuboid, make_cylinder, make_icosphere, save_obj
from ..render import CameraPose, rasterize_hard

__all__ = [
    "CATEGORY_FAMILIES",
    "DatasetManifest",
    "DatasetError",
    "generate_synthetic_dataset",
    "load_manifest",
    "silhouette_boundary",
]

CATEGORY_FAMILIES = ("sphere", "box", "ellipsoid", "cylinder", "composite")

CANONICAL_DISTANCE = 2.0


class DatasetError(ValueError):
    pass


@dataclass
class DatasetManifest:
    root: Path
    entries: list          # dicts: id, category, sketch, mesh, pose
    splits: dict           # {"train": [...], "test": [...]}
    resolution: int
    seed: int
    hashes: dict

    def entry(self, entry_id: str) -> dict:
        for e in self.entries:
            if e["id"] == entry_id:
                return e
        raise DatasetError(f"unknown entry id {entry_id!r}")

    def sketch_path(self, e: dict) -> Path:
        return self.root / e["sketch"]

    def mesh_path(self, e: dict) -> Path:
        return self.root / e["mesh"]

    def load_sketch(self, e: dict) -> np.ndarray:
        arr = np.asarray(Image.open(self.sketch_path(e)).convert("L"))
        return (arr >= 128).astype(np.float64)

    def load_mesh(self, e: dict) -> Mesh:
        return load_obj(self.mesh_path(e))

    def pose(self, e: dict) -> CameraPose:
        return CameraPose.from_dict(e["pose"])

    def split_entries(self, split: str) -> list:
        ids = set(self.splits[split])
        return [e for e in self.entries if e["id"] in ids]

    def filter_categories(self, categories) -> "DatasetManifest":
        """View restricted to the given categories (for per-category training)."""
        cats = {categories} if isinstance(categories, str) else set(categories)
        unknown = cats - {e["category"] for e in self.entries}
        if unknown:
            raise DatasetError(f"categories not in dataset: {sorted(unknown)}")
        entries = [e for e in self.entries if e["category"] in cats]
        keep = {e["id"] for e in entries}
        splits = {k: [i for i in v if i in keep] for k, v in self.splits.items()}
        return DatasetManifest(self.root, entries, splits, self.resolution,
                               self.seed, self.hashes)


def _normalized(mesh: Mesh, rng: np.random.Generator) -> Mesh:
    """Center the bounding box at the origin and scale to a jittered radius
    that fits both the camera frustum and the template's offset reach."""
    target = rng.uniform(0.40, 0.48)
    v = mesh.vertex_array()
    center = (v.max(axis=0) + v.min(axis=0)) / 2
    v = v - center
    r = np.linalg.norm(v, axis=1).max()
    return Mesh(v * (target / r), mesh.faces)


def _merge(a: Mesh, b: Mesh) -> Mesh:
    verts = np.vstack([a.vertex_array(), b.vertex_array()])
    faces = np.vstack([a.faces, b.faces + a.n_vertices])
    return Mesh(verts, faces)


def _make_shape(category: str, rng: np.random.Generator) -> Mesh:
    if category == "sphere":
        raw = make_icosphere(2)
    elif category == "box":
        raw = make_cuboid(rng.uniform(0.5, 1.0, size=3))
    elif category == "ellipsoid":
        axes = rng.uniform(0.4, 1.0, size=3)
        s = make_icosphere(2)
        raw = Mesh(s.vertex_array() * axes, s.faces)
    elif category == "cylinder":
        raw = make_cylinder(rng.uniform(0.3, 0.8), rng.uniform(0.5, 1.0), segments=20)
    elif category == "composite":
        base = make_cuboid((rng.uniform(0.5, 0.9), rng.uniform(0.3, 0.5),
                            rng.uniform(0.5, 0.9)))
        r = rng.uniform(0.3, 0.5)
        top_y = base.vertex_array()[:, 1].max()
        ball = make_icosphere(1).scaled(r).translated((0, top_y + r + 0.02, 0))
        raw = _merge(base, ball)
    else:
        raise DatasetError(f"unknown category {category!r}; "
                           f"available: {CATEGORY_FAMILIES}")
    return _normalized(raw, rng)


def silhouette_boundary(sil: np.ndarray) -> np.ndarray:
    """Inner boundary: silhouette pixels with a 4-neighbor outside it."""
    s = sil.astype(bool)
    interior = s.copy()
    interior[1:, :] &= s[:-1, :]
    interior[:-1, :] &= s[1:, :]
    interior[:, 1:] &= s[:, :-1]
    interior[:, :-1] &= s[:, 1:]
    # image-border silhouette pixels count as boundary
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    return s & ~interior


def _write_png(path: Path, binary: np.ndarray):
    Image.fromarray((binary * 255).astype(np.uint8), mode="L").save(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_synthetic_dataset(out_dir, categories, per_category: int,
                               resolution: int = 128, seed: int = 0) -> DatasetManifest:
    """Emit meshes, sketches and a manifest for the given category families.

    ``categories`` is either a count (first N families) or an explicit list.
    """
    if per_category < 2:
        raise DatasetError(f"per_category must be >= 2, got {per_category}")
    if isinstance(categories, int):
        if not 1 <= categories <= len(CATEGORY_FAMILIES):
            raise DatasetError(f"category count must be in [1, {len(CATEGORY_FAMILIES)}]")
        cats = CATEGORY_FAMILIES[:categories]
    else:
        cats = tuple(categories)
        for c in cats:
            if c not in CATEGORY_FAMILIES:
                raise DatasetError(f"unknown category {c!r}; available: {CATEGORY_FAMILIES}")

    root = Path(out_dir)
    try:
        (root / "sketches").mkdir(parents=True, exist_ok=True)
        (root / "meshes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directories under {root}: {exc}")

    pose = CameraPose(0.0, 0.0, CANONICAL_DISTANCE)
    entries = []
    splits = {"train": [], "test": []}
    n_test = max(1, per_category // 5)
    ss = np.random.SeedSequence(seed)
    for cat, cat_ss in zip(cats, ss.spawn(len(cats))):
        rng = np.random.default_rng(cat_ss)
        for i in range(per_category):
            entry_id = f"{cat}_{i:04d}"
            mesh = _make_shape(cat, rng)
            sil = rasterize_hard(mesh, pose, resolution).array().astype(bool)
            sketch = 1 - silhouette_boundary(sil).astype(np.uint8)
            mesh_rel = f"meshes/{entry_id}.obj"
            sketch_rel = f"sketches/{entry_id}.png"
            save_obj(mesh, root / mesh_rel)
            _write_png(root / sketch_rel, sketch)
            entries.append({
                "id": entry_id,
                "category": cat,
                "sketch": sketch_rel,
                "mesh": mesh_rel,
                "pose": pose.to_dict(),
            })
            split = "test" if i >= per_category - n_test else "train"
            splits[split].append(entry_id)

    hashes = {e["sketch"]: _sha256(root / e["sketch"]) for e in entries}
    hashes.update({e["mesh"]: _sha256(root / e["mesh"]) for e in entries})
    manifest = {
        "version": 1,
        "entries": entries,
        "splits": splits,
        "resolution": resolution,
        "seed": seed,
        "hashes": hashes,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return DatasetManifest(root, entries, splits, resolution, seed, hashes)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    data = json.loads(path.read_text())
    if data.get("version") != 1:
        raise DatasetError(f"unsupported manifest version {data.get('version')}")
    manifest = DatasetManifest(root, data["entries"], data["splits"],
                               data.get("resolution", 128), data.get("seed", 0),
                               data.get("hashes", {}))
    missing = [e["id"] for e in manifest.entries
               if not manifest.sketch_path(e).exists() or not manifest.mesh_path(e).exists()]
    if missing:
        raise DatasetError(f"manifest references missing files for entries: {missing}")
    return manifest
