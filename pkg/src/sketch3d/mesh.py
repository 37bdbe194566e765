"""Triangle-mesh core: template icosphere, deformation, regularizers, metrics.

Meshes are immutable after construction. Vertices may be a plain ndarray or
an autodiff Tensor; the regularizers and ``apply_offsets`` stay differentiable
when handed Tensor vertices, while the evaluation metrics (voxel IoU, Chamfer)
work on detached coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "Mesh",
    "VoxelGrid",
    "PointSample",
    "MeshError",
    "make_icosphere",
    "make_cuboid",
    "make_cylinder",
    "apply_offsets",
    "laplacian_loss",
    "flatten_loss",
    "voxelize",
    "voxel_iou",
    "sample_surface_points",
    "chamfer_distance",
    "chamfer_between_points",
    "load_obj",
    "save_obj",
    "obj_dumps",
]

VOXEL_BOUNDS = (-1.0, 1.0)  # canonical normalization box on every axis


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Vertex list plus triangular face list (CCW winding seen from outside)."""

    vertices: object          # (N, 3) ndarray or Tensor
    faces: np.ndarray         # (M, 3) int array

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        object.__setattr__(self, "faces", faces)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be (M, 3), got {faces.shape}")
        n = self.vertex_array().shape[0]
        if faces.size:
            if faces.min() < 0 or faces.max() >= n:
                raise MeshError(f"face index out of range [0, {n})")
            if (faces[:, 0] == faces[:, 1]).any() or (faces[:, 1] == faces[:, 2]).any() \
                    or (faces[:, 0] == faces[:, 2]).any():
                raise MeshError("face repeats a vertex index")

    def vertex_array(self) -> np.ndarray:
        v = self.vertices
        return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)

    def vertex_tensor(self) -> Tensor:
        v = self.vertices
        return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))

    @property
    def n_vertices(self) -> int:
        return self.vertex_array().shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def scaled(self, s: float) -> "Mesh":
        return Mesh(self.vertex_array() * float(s), self.faces)

    def translated(self, t) -> "Mesh":
        return Mesh(self.vertex_array() + np.asarray(t, dtype=np.float64), self.faces)


@dataclass(frozen=True)
class VoxelGrid:
    resolution: int
    occupancy: np.ndarray     # (R, R, R) bool, index order (x, y, z)
    bounds: tuple = field(default=VOXEL_BOUNDS)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        object.__setattr__(self, "occupancy", occ)
        if occ.shape != (self.resolution,) * 3:
            raise MeshError(f"occupancy shape {occ.shape} != resolution {self.resolution}")
        lo, hi = self.bounds
        if not hi > lo:
            raise MeshError("bounds must have positive extent")


@dataclass(frozen=True)
class PointSample:
    points: np.ndarray        # (K, 3)


# -- template construction ---------------------------------------------------


def make_icosphere(subdivisions: int) -> Mesh:
    """Unit-radius icosphere centered at the origin.

    Vertex/face counts follow the subdivision recurrence: 12/20, 42/80,
    162/320, 642/1280, ...
    """
    if not (0 <= subdivisions <= 5):
        raise MeshError(f"subdivisions must be in [0, 5], got {subdivisions}")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    vlist = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        midpoint: dict[tuple, int] = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                p = np.asarray(vlist[i]) + np.asarray(vlist[j])
                p /= np.linalg.norm(p)
                midpoint[key] = len(vlist)
                vlist.append(tuple(p))
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return Mesh(np.asarray(vlist, dtype=np.float64), np.asarray(faces, dtype=np.int64))


def make_cuboid(half_extents) -> Mesh:
    """Axis-aligned box with the given (hx, hy, hz) half extents, 12 triangles."""
    hx, hy, hz = [float(h) for h in half_extents]
    v = np.array([
        (-hx, -hy, -hz), (hx, -hy, -hz), (hx, hy, -hz), (-hx, hy, -hz),
        (-hx, -hy, hz), (hx, -hy, hz), (hx, hy, hz), (-hx, hy, hz),
    ])
    f = np.array([
        (0, 2, 1), (0, 3, 2),      # z- face
        (4, 5, 6), (4, 6, 7),      # z+ face
        (0, 1, 5), (0, 5, 4),      # y-
        (3, 6, 2), (3, 7, 6),      # y+
        (0, 7, 3), (0, 4, 7),      # x-
        (1, 2, 6), (1, 6, 5),      # x+
    ], dtype=np.int64)
    return Mesh(v, f)


def make_cylinder(radius: float, half_height: float, segments: int = 24) -> Mesh:
    """Closed cylinder along the y axis with fan-capped ends."""
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), np.zeros_like(ang), radius * np.sin(ang)], axis=1)
    bottom = ring + np.array([0, -half_height, 0])
    top = ring + np.array([0, half_height, 0])
    verts = np.vstack([bottom, top, [[0, -half_height, 0]], [[0, half_height, 0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, i + segments, j), (j, i + segments, j + segments)]   # side quads
        faces.append((cb, i, j))                                           # bottom cap
        faces.append((ct, j + segments, i + segments))                     # top cap
    return Mesh(verts, np.asarray(faces, dtype=np.int64))


# -- deformation ----------------------------------------------------------------


def apply_offsets(template: Mesh, offsets) -> Mesh:
    """Deformed copy of ``template`` with per-vertex offsets added.

    Differentiable when ``offsets`` is a Tensor; the Jacobian is the identity.
    """
    tv = template.vertex_array()
    if isinstance(offsets, Tensor):
        if offsets.shape != tv.shape:
            raise ad.ShapeMismatchError(
                f"apply_offsets: offsets {offsets.shape} != vertices {tv.shape}")
        return Mesh(ad.add(Tensor(tv.astype(offsets.dtype)), offsets), template.faces)
    off = np.asarray(offsets, dtype=np.float64)
    if off.shape != tv.shape:
        raise ad.ShapeMismatchError(
            f"apply_offsets: offsets {off.shape} != vertices {tv.shape}")
    return Mesh(tv + off, template.faces)


# -- topology helpers -------------------------------------------------------------


def vertex_adjacency(mesh: Mesh) -> list[set]:
    adj = [set() for _ in range(mesh.n_vertices)]
    for a, b, c in mesh.faces:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return adj


def interior_edges(mesh: Mesh):
    """(edge -> [face indices]) map and the list of edges with exactly 2 faces."""
    edge_faces: dict[tuple, list] = {}
    for fi, (a, b, c) in enumerate(mesh.faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edge_faces.setdefault(key, []).append(fi)
    interior = [(e, fs) for e, fs in edge_faces.items() if len(fs) == 2]
    return edge_faces, interior


def is_watertight(mesh: Mesh) -> bool:
    """Every edge shared by exactly two faces, with consistent orientation."""
    if mesh.n_faces == 0:
        return False
    directed: set[tuple] = set()
    for a, b, c in mesh.faces:
        for e in ((a, b), (b, c), (c, a)):
            if e in directed:
                return False
            directed.add(e)
    return all((v, u) in directed for (u, v) in directed)


# -- regularizers -------------------------------------------------------------------


def _laplacian_operator(mesh: Mesh) -> np.ndarray:
    adj = vertex_adjacency(mesh)
    n = mesh.n_vertices
    lap = np.eye(n)
    for i, nbrs in enumerate(adj):
        if not nbrs:
            raise MeshError(f"vertex {i} has no neighbors (non-manifold input)")
        w = 1.0 / len(nbrs)
        for j in nbrs:
            lap[i, j] -= w
    return lap


def laplacian_loss(mesh: Mesh) -> Tensor:
    """Mean over vertices of squared distance to the neighbor centroid.

    Uniform (combinatorial) weights. Differentiable wrt Tensor vertices.
    """
    verts = mesh.vertex_tensor()
    lap = Tensor(_laplacian_operator(mesh).astype(verts.dtype))
    d = ad.matmul(lap, verts)
    return ad.reduce_mean(ad.reduce_sum(ad.mul(d, d), axis=1))


def flatten_loss(mesh: Mesh) -> Tensor:
    """Dihedral flatness penalty summed over interior edges.

    Per edge the contribution is (cos(theta) + 1)^2 / 2 with theta the
    dihedral angle mapped so coplanar same-orientation faces give theta = pi
    (cos(theta) = -n1.n2 for outward unit normals). Zero iff locally flat.
    Boundary edges are skipped, as are edges touching a zero-area face
    (the dihedral is undefined there).
    """
    _, interior = interior_edges(mesh)
    if not interior:
        return Tensor(np.asarray(0.0))
    verts = mesh.vertex_tensor()
    f1 = np.array([fs[0] for _, fs in interior])
    f2 = np.array([fs[1] for _, fs in interior])

    def normals(face_idx):
        tri = mesh.faces[face_idx]
        v0 = ad.gather_rows(verts, tri[:, 0])
        v1 = ad.gather_rows(verts, tri[:, 1])
        v2 = ad.gather_rows(verts, tri[:, 2])
        e1 = ad.sub(v1, v0)
        e2 = ad.sub(v2, v0)
        nx = ad.sub(ad.mul(e1[:, 1], e2[:, 2]), ad.mul(e1[:, 2], e2[:, 1]))
        ny = ad.sub(ad.mul(e1[:, 2], e2[:, 0]), ad.mul(e1[:, 0], e2[:, 2]))
        nz = ad.sub(ad.mul(e1[:, 0], e2[:, 1]), ad.mul(e1[:, 1], e2[:, 0]))
        return ad.stack([nx, ny, nz], axis=1)

    def unit(n):
        norm = ad.sqrt(ad.reduce_sum(ad.mul(n, n), axis=1, keepdims=True) + 1e-24)
        return ad.div(n, norm)

    n1 = normals(f1)
    n2 = normals(f2)
    valid = ((np.linalg.norm(n1.data, axis=1) > 1e-12)
             & (np.linalg.norm(n2.data, axis=1) > 1e-12)).astype(verts.dtype)
    cos_theta = -ad.reduce_sum(ad.mul(unit(n1), unit(n2)), axis=1)
    dev = ad.mul(cos_theta + 1.0, Tensor(valid))
    return ad.reduce_sum(ad.mul(dev, dev)) * 0.5


# -- voxelization ------------------------------------------------------------------


def _voxel_centers(resolution: int) -> np.ndarray:
    lo, hi = VOXEL_BOUNDS
    step = (hi - lo) / resolution
    return lo + step * (np.arange(resolution) + 0.5)


def voxelize(mesh: Mesh, resolution: int) -> VoxelGrid:
    """Occupancy by parity of +x ray crossings from each voxel center."""
    if not (8 <= resolution <= 128):
        raise MeshError(f"resolution must be in [8, 128], got {resolution}")
    if not is_watertight(mesh):
        raise MeshError("voxelize requires a watertight mesh "
                        "(found boundary or non-manifold edges)")
    verts = mesh.vertex_array()
    tri = verts[mesh.faces]                           # (M, 3, 3)
    centers = _voxel_centers(resolution)
    # irrational nudge keeps rays off edges/vertices without breaking determinism
    jit = 1e-9
    ys = centers + jit * np.sqrt(2.0)
    zs = centers + jit * np.sqrt(3.0)

    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    d1 = v1 - v0
    d2 = v2 - v0
    det = d1[:, 1] * d2[:, 2] - d1[:, 2] * d2[:, 1]   # (y,z)-plane determinant
    ok = np.abs(det) > 1e-15
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)

    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    py = yy.reshape(-1)
    pz = zz.reshape(-1)
    occ_rays = np.zeros((py.size, resolution), dtype=bool)   # (ray, x-index)

    chunk = 4096
    for start in range(0, py.size, chunk):
        cy = py[start:start + chunk, None] - v0[None, :, 1]
        cz = pz[start:start + chunk, None] - v0[None, :, 2]
        a = (cy * d2[None, :, 2] - cz * d2[None, :, 1]) * inv_det[None, :]
        b = (cz * d1[None, :, 1] - cy * d1[None, :, 2]) * inv_det[None, :]
        hit = ok[None, :] & (a >= 0) & (b >= 0) & (a + b <= 1)
        xint = np.where(hit, v0[None, :, 0] + a * d1[None, :, 0] + b * d2[None, :, 0], -np.inf)
        # parity of crossings beyond each x voxel center
        counts = (xint[:, None, :] > centers[None, :, None]).sum(axis=2)
        occ_rays[start:start + cy.shape[0]] = counts % 2 == 1
    # rays are laid out (y, z); reorder occupancy to (x, y, z)
    occ = np.transpose(occ_rays.reshape(resolution, resolution, resolution), (2, 0, 1))
    return VoxelGrid(resolution, occ)


def voxel_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    if a.resolution != b.resolution or a.bounds != b.bounds:
        raise MeshError(f"voxel grids differ: {a.resolution}/{a.bounds} "
                        f"vs {b.resolution}/{b.bounds}")
    inter = np.logical_and(a.occupancy, b.occupancy).sum()
    union = np.logical_or(a.occupancy, b.occupancy).sum()
    if union == 0:
        return 1.0
    return float(inter) / float(union)


# -- surface sampling & chamfer ----------------------------------------------------


def _face_areas(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = verts[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def sample_surface_points(mesh: Mesh, k: int, seed: int) -> PointSample:
    """K points sampled uniformly by surface area (seeded)."""
    verts = mesh.vertex_array()
    areas = _face_areas(verts, mesh.faces)
    total = areas.sum()
    if total <= 0:
        raise MeshError("cannot sample a mesh with zero total surface area")
    rng = np.random.default_rng(seed)
    fidx = rng.choice(mesh.n_faces, size=k, p=areas / total)
    u = rng.random(k)
    v = rng.random(k)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    tri = verts[mesh.faces[fidx]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointSample(pts)


def chamfer_between_points(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbor distance between point sets."""
    ta = cKDTree(a)
    tb = cKDTree(b)
    d_ab, _ = tb.query(a, k=1)
    d_ba, _ = ta.query(b, k=1)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def chamfer_distance(a: Mesh, b: Mesh, samples: int = 10000, seed: int | tuple = 0) -> float:
    if samples < 100:
        raise MeshError(f"samples must be >= 100, got {samples}")
    if isinstance(seed, tuple):
        seed_a, seed_b = seed
    else:
        children = np.random.SeedSequence(seed).spawn(2)
        seed_a, seed_b = children[0], children[1]
    pa = sample_surface_points(a, samples, seed_a).points
    pb = sample_surface_points(b, samples, seed_b).points
    return chamfer_between_points(pa, pb)


# -- OBJ IO --------------------------------------------------------------------------


def obj_dumps(mesh: Mesh) -> str:
    """OBJ text with round-trip-exact vertex coordinates."""
    verts = mesh.vertex_array()
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def save_obj(mesh: Mesh, path):
    with open(path, "w") as fh:
        fh.write(obj_dumps(mesh))


def load_obj(path) -> Mesh:
    verts = []
    faces = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record: {line!r}")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record: {line!r}")
            elif parts[0] == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise MeshError(
                        f"{path}:{lineno}: only triangular faces are supported "
                        f"(got {len(idx)} indices)")
                try:
                    face = [int(tok.split("/")[0]) - 1 for tok in idx]
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: malformed face record: {line!r}")
                faces.append(face)
    if not verts:
        raise MeshError(f"{path}: no vertices found")
    return Mesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64))
