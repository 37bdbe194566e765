"""Training objectives: multi-scale silhouette IoU, mesh regularizers, and the
non-saturating structure-aware GAN losses, plus their weighted combination."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import Mesh, flatten_loss, laplacian_loss
from .render import Silhouette

__all__ = [
    "LossWeights",
    "LossReport",
    "iou_loss",
    "multiscale_silhouette_loss",
    "regularizer_loss",
    "f_nonsat",
    "gan_losses",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_scales: tuple = (1 / 3, 1 / 3, 1 / 3)
    lambda_sd: float = 0.1
    lambda_flatten: float = 5e-4
    lambda_laplacian: float = 5e-3

    def __post_init__(self):
        if any(w < 0 for w in self.lambda_scales) or self.lambda_sd < 0 \
                or self.lambda_flatten < 0 or self.lambda_laplacian < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d) -> "LossWeights":
        d = dict(d)
        d["lambda_scales"] = tuple(d["lambda_scales"])
        return LossWeights(**d)


@dataclass
class LossReport:
    """Per-step scalar record; serialized as one JSON line in the training log."""

    step: int
    total: float
    l_sp: float
    l_flatten: float
    l_laplacian: float
    l_sd_generator: float
    l_sd_discriminator: float
    lambda_sd: float
    learning_rate: float
    wall_time: float

    @property
    def l_r(self) -> float:
        return self.l_flatten + self.l_laplacian

    def decomposition_residual(self) -> float:
        return abs(self.total - (self.l_sp + self.l_r
                                 + self.lambda_sd * self.l_sd_generator))

    def to_json(self) -> str:
        d = asdict(self)
        d["l_r"] = self.l_r
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "LossReport":
        d = json.loads(line)
        d.pop("l_r", None)
        return LossReport(**d)


def _as_tensor(s) -> Tensor:
    return s.values if isinstance(s, Silhouette) else s


def iou_loss(s1, s2) -> Tensor:
    """1 - |S1*S2| / |S1 + S2 - S1*S2| over soft values in [0, 1].

    Returns 0 by convention when both silhouettes are identically zero.
    """
    t1, t2 = _as_tensor(s1), _as_tensor(s2)
    if t1.shape != t2.shape:
        raise ad.ShapeMismatchError(f"iou_loss: resolutions differ, "
                                    f"{t1.shape} vs {t2.shape}")
    prod = ad.mul(t1, t2)
    inter = ad.reduce_sum(prod)
    union = ad.reduce_sum(ad.sub(ad.add(t1, t2), prod))
    if union.data == 0.0:
        return Tensor(np.asarray(0.0, dtype=t1.dtype))
    return 1.0 - ad.div(inter, union)


def multiscale_silhouette_loss(rendered: list, targets: list, weights) -> Tensor:
    """Weighted sum of per-resolution IoU losses over an ascending pyramid."""
    scale_w = weights.lambda_scales if isinstance(weights, LossWeights) else tuple(weights)
    if not (len(rendered) == len(targets) == len(scale_w)):
        raise ValueError(f"multiscale lists misaligned: {len(rendered)} rendered, "
                         f"{len(targets)} targets, {len(scale_w)} weights")
    total = None
    for r, t, w in zip(rendered, targets, scale_w):
        term = iou_loss(r, t) * w
        total = term if total is None else ad.add(total, term)
    return total


def regularizer_loss(mesh: Mesh, weights) -> Tensor:
    """lambda_flatten * flatten + lambda_laplacian * laplacian."""
    if isinstance(weights, LossWeights):
        wf, wl = weights.lambda_flatten, weights.lambda_laplacian
    else:
        wf, wl = weights
    return ad.add(flatten_loss(mesh) * wf, laplacian_loss(mesh) * wl)


def f_nonsat(u) -> Tensor:
    """f(u) = -log(1 + exp(-u)), the non-saturating GAN transform.

    Stable for |u| up to at least 1e4; monotonically increasing and strictly
    negative.
    """
    t = u if isinstance(u, Tensor) else Tensor(np.asarray(u, dtype=np.float64))
    return -ad.softplus(-t)


def gan_losses(d_fake: Tensor, d_real: Tensor):
    """(generator_loss, discriminator_loss) from raw scores.

    Generator maximizes f(D(fake)); discriminator maximizes
    f(D(real)) + f(-D(fake)). Both returned as minimization objectives.
    """
    if d_fake.size == 0 or d_real.size == 0:
        raise ValueError("gan_losses: empty score batch")
    generator_loss = -ad.reduce_mean(f_nonsat(d_fake))
    discriminator_loss = ad.sub(-ad.reduce_mean(f_nonsat(d_real)),
                                ad.reduce_mean(f_nonsat(-d_fake)))
    return generator_loss, discriminator_loss


def total_loss(l_sp, l_r, l_sd_gen, weights: LossWeights) -> Tensor:
    """l_sp + l_r + lambda_sd * l_sd_gen."""
    sp = l_sp if isinstance(l_sp, Tensor) else Tensor(np.asarray(l_sp, dtype=np.float64))
    r = l_r if isinstance(l_r, Tensor) else Tensor(np.asarray(l_r, dtype=np.float64))
    g = l_sd_gen if isinstance(l_sd_gen, Tensor) else \
        Tensor(np.asarray(l_sd_gen, dtype=np.float64))
    return ad.add(ad.add(sp, r), g * weights.lambda_sd)
