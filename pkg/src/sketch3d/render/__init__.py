"""Camera model, random view sampling, and the differentiable soft rasterizer.

Two interchangeable kernel backends exist: a compiled Cython extension and a
vectorized numpy fallback, selected at import (override with the
SKETCH3D_RASTER_BACKEND environment variable or ``set_backend``).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..mesh import Mesh
from . import _numpy_backend

__all__ = [
    "CameraPose",
    "RenderConfig",
    "Silhouette",
    "RenderError",
    "sample_poses",
    "project_vertices",
    "project_to_ndc",
    "soft_rasterize",
    "rasterize_hard",
    "render_multiscale",
    "save_silhouette_png",
    "load_silhouette_png",
    "get_backend",
    "set_backend",
    "available_backends",
    "near_clamp_count",
    "reset_near_clamp_count",
]

try:
    from . import _rasterkern  # compiled extension, optional
    _HAS_COMPILED = True
except ImportError:
    _rasterkern = None
    _HAS_COMPILED = False

_BACKENDS = {"numpy": _numpy_backend}
if _HAS_COMPILED:
    _BACKENDS["compiled"] = _rasterkern

_active_backend = os.environ.get(
    "SKETCH3D_RASTER_BACKEND", "compiled" if _HAS_COMPILED else "numpy")
if _active_backend not in _BACKENDS:
    raise ImportError(f"unknown rasterizer backend {_active_backend!r}; "
                      f"available: {sorted(_BACKENDS)}")

_near_clamped = 0

VALID_RESOLUTIONS = (16, 32, 64, 128, 256)  # 16 admitted for gradient checks


class RenderError(ValueError):
    pass


def available_backends() -> list:
    return sorted(_BACKENDS)


def get_backend() -> str:
    return _active_backend


def set_backend(name: str):
    global _active_backend
    if name not in _BACKENDS:
        raise RenderError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    _active_backend = name


def near_clamp_count() -> int:
    return _near_clamped


def reset_near_clamp_count():
    global _near_clamped
    _near_clamped = 0


@dataclass(frozen=True)
class CameraPose:
    """Azimuth/elevation/distance view spec; looks at the origin, up is +y."""

    azimuth: float
    elevation: float
    distance: float

    def __post_init__(self):
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "distance", float(self.distance))
        if not -90.0 <= self.elevation <= 90.0:
            raise RenderError(f"elevation {self.elevation} outside [-90, 90]")
        if self.distance <= 0:
            raise RenderError(f"distance must be positive, got {self.distance}")

    def to_dict(self) -> dict:
        return {"azimuth": self.azimuth, "elevation": self.elevation,
                "distance": self.distance}

    @staticmethod
    def from_dict(d) -> "CameraPose":
        return CameraPose(d["azimuth"], d["elevation"], d["distance"])


@dataclass(frozen=True)
class RenderConfig:
    resolution: int
    sigma: float = 1e-4
    fov_deg: float = 30.0
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        if self.resolution not in VALID_RESOLUTIONS:
            raise RenderError(f"resolution {self.resolution} not in {VALID_RESOLUTIONS}")
        if self.sigma <= 0:
            raise RenderError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Silhouette:
    values: Tensor            # (H, W) in [0, 1]
    pose: CameraPose
    resolution: int

    def array(self) -> np.ndarray:
        return self.values.data


# -- pose sampling ------------------------------------------------------------


def sample_poses(n: int, seed, azimuth_range=(0.0, 360.0),
                 elevation_range=(-10.0, 40.0), distance: float = 2.0) -> list:
    """n i.i.d. uniform poses over the given ranges at a fixed distance."""
    if n < 1:
        raise RenderError(f"need at least one pose, got n={n}")
    az_lo, az_hi = azimuth_range
    el_lo, el_hi = elevation_range
    if az_hi < az_lo or el_hi < el_lo:
        raise RenderError(f"empty pose range: azimuth {azimuth_range}, "
                          f"elevation {elevation_range}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    az = rng.uniform(az_lo, az_hi, size=n)
    el = rng.uniform(el_lo, el_hi, size=n)
    return [CameraPose(a, e, distance) for a, e in zip(az, el)]


# -- projection -----------------------------------------------------------------


def camera_basis(pose: CameraPose):
    """Rotation rows (right, up, -forward) and the camera position."""
    az = math.radians(pose.azimuth)
    el = math.radians(pose.elevation)
    cam = pose.distance * np.array([
        math.cos(el) * math.sin(az),
        math.sin(el),
        math.cos(el) * math.cos(az),
    ])
    fwd = -cam / np.linalg.norm(cam)
    up_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up_hint)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        # looking straight up/down: fall back to an azimuth-consistent right
        right = np.array([math.cos(az), 0.0, -math.sin(az)])
        nr = np.linalg.norm(right)
    right /= nr
    up = np.cross(right, fwd)
    rot = np.stack([right, up, -fwd])   # camera looks down -z in camera space
    return rot, cam


def project_to_ndc(vertices, pose: CameraPose, config: RenderConfig) -> Tensor:
    """Per-vertex (x_ndc, y_ndc, depth); differentiable wrt vertices."""
    global _near_clamped
    v = vertices if isinstance(vertices, Tensor) else Tensor(np.asarray(vertices, float))
    rot, cam = camera_basis(pose)
    dtype = v.dtype
    rel = ad.sub(v, Tensor(cam.astype(dtype)))
    p_cam = ad.matmul(rel, Tensor(rot.T.astype(dtype)))
    x_cam = p_cam[:, 0]
    y_cam = p_cam[:, 1]
    depth = -p_cam[:, 2]
    behind = int((depth.data < config.near).sum())
    if behind:
        _near_clamped += behind
    denom = ad.clamp_min(depth, config.near)
    fl = 1.0 / math.tan(math.radians(config.fov_deg) / 2.0)
    x_ndc = ad.div(x_cam * fl, denom)
    y_ndc = ad.div(y_cam * fl, denom)
    return ad.stack([x_ndc, y_ndc, depth], axis=1)


def project_vertices(mesh: Mesh, pose: CameraPose, config: RenderConfig) -> Tensor:
    """Per-vertex (x_px, y_px, depth) in pixel units; differentiable."""
    ndc = project_to_ndc(mesh.vertex_tensor(), pose, config)
    w = h = config.resolution
    x_px = (ndc[:, 0] + 1.0) * (w / 2.0)
    y_px = (1.0 - ndc[:, 1]) * (h / 2.0)
    return ad.stack([x_px, y_px, ndc[:, 2]], axis=1)


# -- rasterization ----------------------------------------------------------------


def _raster_soft_op(verts_ndc: Tensor, faces: np.ndarray, h: int, w: int,
                    sigma: float) -> Tensor:
    backend = _BACKENDS[_active_backend]
    v2 = np.ascontiguousarray(verts_ndc.data[:, :2], dtype=np.float64)
    f = np.ascontiguousarray(faces, dtype=np.int64)
    image, saved = backend.forward_soft(v2, f, h, w, sigma)
    out_data = image.astype(verts_ndc.dtype, copy=False)

    def vjp(g):
        if not verts_ndc.requires_grad:
            return
        g3 = np.zeros_like(verts_ndc.data)
        if saved is not None:
            g2 = backend.backward_soft(saved, np.asarray(g, dtype=np.float64))
            g3[:, :2] = g2.astype(verts_ndc.dtype, copy=False)
        verts_ndc._accumulate(g3)

    return ad._make(out_data, (verts_ndc,), vjp, "soft_rasterize")


def soft_rasterize(mesh: Mesh, pose: CameraPose, config: RenderConfig) -> Silhouette:
    """Soft occupancy image; per-face influence sigmoid(delta * d^2 / sigma)
    aggregated by probabilistic union. Differentiable wrt mesh vertices."""
    if config.sigma <= 0:
        raise RenderError(f"sigma must be positive, got {config.sigma}")
    ndc = project_to_ndc(mesh.vertex_tensor(), pose, config)
    values = _raster_soft_op(ndc, mesh.faces, config.resolution, config.resolution,
                             config.sigma)
    return Silhouette(values, pose, config.resolution)


def rasterize_hard(mesh: Mesh, pose: CameraPose, resolution: int,
                   config: RenderConfig | None = None) -> Silhouette:
    """Binary coverage silhouette (pixel center inside any projected face)."""
    cfg = config or RenderConfig(resolution=resolution)
    backend = _BACKENDS[_active_backend]
    ndc = project_to_ndc(mesh.vertex_array(), pose, cfg)
    v2 = np.ascontiguousarray(ndc.data[:, :2], dtype=np.float64)
    f = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    image = backend.forward_hard(v2, f, resolution, resolution)
    return Silhouette(Tensor(image.astype(np.float64)), pose, resolution)


def render_multiscale(mesh: Mesh, pose: CameraPose, resolutions,
                      sigma: float = 1e-4) -> list:
    """One soft silhouette per resolution, ascending order required."""
    res = list(resolutions)
    if res != sorted(res):
        raise RenderError(f"resolutions must ascend, got {res}")
    out = []
    for r in res:
        out.append(soft_rasterize(mesh, pose, RenderConfig(resolution=r, sigma=sigma)))
    return out


# -- PNG IO -------------------------------------------------------------------------


def save_silhouette_png(sil: Silhouette, path):
    from PIL import Image
    arr = np.clip(sil.array() * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_silhouette_png(path) -> np.ndarray:
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
