"""Gradient verification suite: finite-difference checks for every primitive
op and for each composite the training path uses (attention block, IoU loss,
rasterizer, discriminator, and the full sketch-to-loss chain).

All checks run in float64 with central differences at eps = 1e-3. Paths that
cross the rasterizer use a 1e-3 relative tolerance, everything else 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import render
from .autodiff import Tensor, grad_check
from .losses import f_nonsat, iou_loss
from .mesh import Mesh, apply_offsets, flatten_loss, laplacian_loss, make_icosphere
from .networks import (Discriminator, DiscriminatorConfig, Generator,
                       GeneratorConfig, sem_attention)

__all__ = ["GradCheckResult", "run_gradient_suite", "toy_generator_config"]

EPS = 1e-3
TOL_DEFAULT = 1e-4
TOL_RASTER = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: max_rel_err={self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.0e})")


def toy_generator_config(**overrides) -> GeneratorConfig:
    """16x16-input generator small enough for finite differencing."""
    base = dict(input_size=16, dz=8, enc_channels=(2, 4, 4, 8),
                dec_grid=(8, 1, 1), dec_channels=(4, 4, 2),
                template_subdivisions=0, template_scale=0.5, max_offset=0.5,
                use_sem=True, sem_stage=1, seed=123, dtype="float64")
    base.update(overrides)
    return GeneratorConfig(**base)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _primitive_checks() -> list:
    rng = _rng(7)
    checks = []
    a34 = rng.normal(size=(3, 4))
    b34 = rng.normal(size=(3, 4)) + 3.0       # positive, away from relu kink
    b4 = rng.normal(size=(4,))
    m42 = rng.normal(size=(4, 2))

    def add_check(name, fn, point, tol=TOL_DEFAULT):
        checks.append((name, fn, Tensor(point), tol))

    add_check("add.broadcast", lambda x: (x + Tensor(b4)).sum(), a34)
    add_check("sub", lambda x: (x - Tensor(a34 * 0.5)).sum(), a34)
    add_check("mul.broadcast", lambda x: (x * Tensor(b4)).sum(), a34)
    add_check("div", lambda x: (x / Tensor(b34)).sum(), a34)
    add_check("div.denominator", lambda x: (Tensor(a34) / x).sum(), b34)
    add_check("matmul.left", lambda x: ad.matmul(x, Tensor(m42)).sum(), a34)
    add_check("matmul.right", lambda x: ad.matmul(Tensor(a34), x).sum(),
              rng.normal(size=(4, 2)))
    add_check("relu", lambda x: ad.relu(x).sum(), a34 + np.sign(a34) * 0.01)
    add_check("leaky_relu", lambda x: ad.leaky_relu(x, 0.2).sum(),
              a34 + np.sign(a34) * 0.01)
    add_check("sigmoid", lambda x: ad.sigmoid(x).sum(), a34)
    add_check("tanh", lambda x: ad.tanh(x).sum(), a34)
    add_check("exp", lambda x: ad.exp(x).sum(), a34 * 0.5)
    add_check("log", lambda x: ad.log(x).sum(), b34)
    add_check("sqrt", lambda x: ad.sqrt(x).sum(), b34)
    add_check("softplus", lambda x: ad.softplus(x).sum(), a34 * 3)
    add_check("clamp_min", lambda x: ad.clamp_min(x, 0.5).sum(),
              b34 + np.sign(b34 - 0.5) * 0.01)
    w3 = rng.normal(size=(3,))
    w62 = rng.normal(size=(6, 2))
    add_check("softmax.axis0",
              lambda x: (ad.softmax(x, axis=0) * Tensor(b34)).sum(), a34)
    add_check("softmax.axis1",
              lambda x: (ad.softmax(x, axis=1) * Tensor(b34)).sum(), a34)
    add_check("reduce_mean.axis",
              lambda x: (x.mean(axis=1) * Tensor(w3)).sum(), a34)
    add_check("reshape.transpose",
              lambda x: (ad.transpose(x.reshape(2, 6)) * Tensor(w62)).sum(), a34)
    add_check("getitem.slice", lambda x: (x[1:, :2] * 2.0).sum(), a34)
    add_check("gather_rows",
              lambda x: ad.gather_rows(x, np.array([0, 2, 2, 1])).sum(), a34)
    add_check("stack.concat",
              lambda x: ad.concat([ad.stack([x[0], x[2]], axis=0), x], axis=0).sum(),
              a34)

    x_img = rng.normal(size=(2, 3, 6, 6))
    w_conv = rng.normal(size=(4, 3, 3, 3)) * 0.3
    b_conv = rng.normal(size=(4,)) * 0.1
    wgt = rng.normal(size=(2, 4, 6, 6))
    wgt2 = rng.normal(size=(2, 4, 3, 3))

    add_check("conv2d.x.stride1",
              lambda x: (ad.conv2d(x, Tensor(w_conv), Tensor(b_conv), 1, 1)
                         * Tensor(wgt)).sum(), x_img)
    add_check("conv2d.w.stride1",
              lambda w: (ad.conv2d(Tensor(x_img), w, Tensor(b_conv), 1, 1)
                         * Tensor(wgt)).sum(), w_conv)
    add_check("conv2d.x.stride2",
              lambda x: (ad.conv2d(x, Tensor(w_conv), Tensor(b_conv), 2, 1)
                         * Tensor(wgt2)).sum(), x_img)
    add_check("conv2d.bias",
              lambda b: (ad.conv2d(Tensor(x_img), Tensor(w_conv), b, 1, 1)
                         * Tensor(wgt)).sum(), b_conv)
    w_up = rng.normal(size=(2, 3, 12, 12))
    add_check("upsample_nearest2x",
              lambda x: (ad.upsample_nearest2x(x) * Tensor(w_up)).sum(), x_img)
    return checks


def _composite_checks() -> list:
    rng = _rng(21)
    checks = []

    # attention block, nonzero mixing scale so every projection matters
    c, hh, ww = 4, 3, 3
    params = {
        "wb": Tensor(rng.normal(size=(2, c)) * 0.5),
        "wc": Tensor(rng.normal(size=(2, c)) * 0.5),
        "wd": Tensor(rng.normal(size=(c, c)) * 0.5),
        "lam": Tensor(np.array([0.37])),
    }
    a_feat = rng.normal(size=(c, hh, ww))
    wgt = rng.normal(size=(c, hh, ww))

    def sem_fn(x):
        return (sem_attention(x, params) * Tensor(wgt)).sum()

    checks.append(("sem_attention.features", sem_fn, Tensor(a_feat), TOL_DEFAULT))

    def sem_param_fn(key):
        def fn(p):
            local = dict(params)
            local[key] = p
            return (sem_attention(Tensor(a_feat), local) * Tensor(wgt)).sum()
        return fn

    for key in ("wb", "wc", "wd", "lam"):
        checks.append((f"sem_attention.{key}", sem_param_fn(key),
                       Tensor(params[key].data.copy()), TOL_DEFAULT))

    target = (rng.random((8, 8)) > 0.5).astype(float)
    soft = rng.random((8, 8)) * 0.9 + 0.05

    checks.append(("iou_loss", lambda s: iou_loss(s, Tensor(target)),
                   Tensor(soft), TOL_DEFAULT))
    checks.append(("f_nonsat", lambda u: f_nonsat(u).sum(),
                   Tensor(rng.normal(size=(5,)) * 3), TOL_DEFAULT))

    ico = make_icosphere(0)
    verts0 = ico.vertex_array() * 0.8 + rng.normal(size=(12, 3)) * 0.02
    faces0 = ico.faces
    checks.append(("laplacian_loss",
                   lambda v: laplacian_loss(Mesh(v, faces0)),
                   Tensor(verts0), TOL_DEFAULT))
    checks.append(("flatten_loss",
                   lambda v: flatten_loss(Mesh(v, faces0)),
                   Tensor(verts0), TOL_DEFAULT))
    return checks


def _raster_checks() -> list:
    checks = []
    faces = np.array([[0, 1, 2]])
    tri = np.array([[-0.31, -0.22, 0.0], [0.42, -0.18, 0.05], [0.03, 0.38, -0.04]])
    pose = render.CameraPose(12.0, 7.0, 2.0)
    cfg = render.RenderConfig(resolution=16, sigma=3e-3)

    def raster_sum(v):
        sil = render.soft_rasterize(Mesh(v, faces), pose, cfg)
        return sil.values.sum()

    checks.append(("soft_rasterize.1tri.sum", raster_sum, Tensor(tri), TOL_RASTER))

    target = np.zeros((16, 16))
    target[4:12, 5:11] = 1.0

    def raster_iou(v):
        sil = render.soft_rasterize(Mesh(v, faces), pose, cfg)
        return iou_loss(sil.values, Tensor(target))

    checks.append(("soft_rasterize.1tri.iou", raster_iou, Tensor(tri), TOL_RASTER))
    return checks


def _network_checks() -> list:
    rng = _rng(33)
    checks = []

    dcfg = DiscriminatorConfig(resolution=16, n_views=2, channels=(2, 4),
                               seed=5, dtype="float64")
    disc = Discriminator(dcfg)
    sils = rng.random((1, 2, 16, 16))

    checks.append(("discriminator.input",
                   lambda x: disc(x).sum(), Tensor(sils), TOL_DEFAULT))

    def disc_param_fn(key):
        def fn(p):
            old = disc.params[key]
            disc.params[key] = p
            try:
                return disc(Tensor(sils)).sum()
            finally:
                disc.params[key] = old
        return fn

    checks.append(("discriminator.conv_w", disc_param_fn("disc.s0.w"),
                   Tensor(disc.params["disc.s0.w"].data.copy()), TOL_DEFAULT))
    return checks


def _end_to_end_checks() -> list:
    """Sketch -> encode -> decode -> deform -> rasterize -> IoU, per parameter."""
    gen = Generator(toy_generator_config())
    # wake up the path: meaningful offsets and a live attention mix; the
    # off-axis pose keeps finite differences away from symmetric kinks
    gen.params["dec.head.w"].data *= 50.0
    gen.params["dec.sem.lam"].data[:] = 0.3
    sketch = np.ones((16, 16))
    sketch[5:11, 4:12] = 0
    x = sketch[None, None].astype(np.float64)
    pose = render.CameraPose(9.0, 4.0, 2.0)
    cfg = render.RenderConfig(resolution=16, sigma=6e-3)
    target = render.rasterize_hard(gen.template.scaled(0.9), pose, 16).array()

    def loss_with(key, p):
        old = gen.params[key]
        gen.params[key] = p
        try:
            z = gen.encode_batch(Tensor(x))
            offsets = gen.decode_batch(z)
            mesh = apply_offsets(gen.template, offsets[0])
            sil = render.soft_rasterize(mesh, pose, cfg)
            return iou_loss(sil.values, Tensor(target))
        finally:
            gen.params[key] = old

    checks = []
    for key in ("enc.s0.w1", "dec.head.b", "dec.sem.lam", "dec.u1.w"):
        point = Tensor(gen.params[key].data.copy())
        checks.append((f"end_to_end.{key}",
                       (lambda k: (lambda p: loss_with(k, p)))(key), point, TOL_RASTER))
    return checks


def run_gradient_suite(include_end_to_end: bool = True) -> list:
    """Run every check; returns GradCheckResult list in execution order."""
    groups = [_primitive_checks(), _composite_checks(), _raster_checks(),
              _network_checks()]
    if include_end_to_end:
        groups.append(_end_to_end_checks())
    results = []
    for group in groups:
        for name, fn, point, tol in group:
            err = grad_check(fn, point, eps=EPS)
            results.append(GradCheckResult(name, err, tol))
    return results
