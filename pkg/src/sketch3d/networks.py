"""Generator (encoder -> shape code -> decoder -> vertex offsets), the stroke
enhancement attention block, and the multi-view silhouette discriminator.

Architectures are desk-scale stand-ins behind fixed interfaces: a residual
downsampling encoder, a cascaded-upsampling decoder whose final tanh head
emits bounded per-vertex offsets, and a small strided-conv discriminator
scoring stacks of view silhouettes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import Mesh, apply_offsets, make_icosphere

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "ShapeCode",
    "Generator",
    "Discriminator",
    "sem_attention",
    "validate_sketch",
    "SketchError",
]

_ICOSPHERE_VERTS = {0: 12, 1: 42, 2: 162, 3: 642, 4: 2562}


class SketchError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    input_size: int = 128
    dz: int = 512
    enc_channels: tuple = (16, 32, 64, 128)
    dec_grid: tuple = (128, 2, 2)          # channels, h, w of the coarse grid
    dec_channels: tuple = (64, 32, 16)     # one entry per upsampling block
    template_subdivisions: int = 3
    template_scale: float = 0.5
    max_offset: float = 0.5
    use_sem: bool = True
    sem_stage: int = 1                     # upsampling block index SEM follows
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.input_size % (2 ** len(self.enc_channels)) != 0:
            raise ValueError(f"input_size {self.input_size} not divisible by "
                             f"2^{len(self.enc_channels)}")
        if not 0 <= self.sem_stage < len(self.dec_channels):
            raise ValueError(f"sem_stage {self.sem_stage} out of range")

    @property
    def n_vertices(self) -> int:
        return _ICOSPHERE_VERTS[self.template_subdivisions]

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d) -> "GeneratorConfig":
        d = dict(d)
        for k in ("enc_channels", "dec_grid", "dec_channels"):
            d[k] = tuple(d[k])
        return GeneratorConfig(**d)


@dataclass(frozen=True)
class DiscriminatorConfig:
    resolution: int = 64
    n_views: int = 2
    channels: tuple = (16, 32, 64, 128)
    seed: int = 1
    dtype: str = "float32"

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d) -> "DiscriminatorConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return DiscriminatorConfig(**d)


@dataclass(frozen=True)
class ShapeCode:
    z: Tensor

    @property
    def dim(self) -> int:
        return self.z.shape[-1]


def validate_sketch(values: np.ndarray, input_size: int,
                    require_stroke: bool = True) -> np.ndarray:
    """Check the 0/1 stroke convention (0 = stroke) and the configured size.

    The encoder itself tolerates all-background input (finite code out);
    stroke presence is enforced upstream by the pipeline's input validator,
    which calls this with require_stroke=True.
    """
    arr = np.asarray(values)
    if arr.shape != (input_size, input_size):
        raise SketchError(f"sketch must be {input_size}x{input_size}, "
                          f"got {arr.shape}")
    uniq = np.unique(arr)
    if not np.all(np.isin(uniq, (0, 1))):
        raise SketchError("sketch must be binary with values in {0, 1}")
    if require_stroke and not (arr == 0).any():
        raise SketchError("sketch has no stroke pixels")
    return arr.astype(np.float64)


# -- parameter init ---------------------------------------------------------------


def _conv_init(rng, cout, cin, k, dtype, std=None):
    std = std if std is not None else np.sqrt(2.0 / (cin * k * k))
    return rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype)


def _linear_init(rng, cin, cout, dtype, std=None):
    std = std if std is not None else np.sqrt(2.0 / cin)
    return rng.normal(0.0, std, size=(cin, cout)).astype(dtype)


def _param(store: dict, name: str, arr: np.ndarray) -> Tensor:
    t = Tensor(arr, requires_grad=True)
    store[name] = t
    return t


# -- stroke enhancement (position-aware attention) -----------------------------------


def sem_attention(a: Tensor, params: dict, prefix: str = "") -> Tensor:
    """Position-attention reweighting of a (C, H, W) feature map.

    Query/key/value features come from learned 1x1 projections; the attention
    matrix is softmax-normalized over its first index so each column sums to
    one, and the result is scaled by the learnable scalar ``lam`` (zero at
    init, making the block an exact identity) and added back to the input.
    """
    if a.data.ndim != 3:
        raise ad.ShapeMismatchError(f"sem_attention: expected (C, H, W), got {a.shape}")
    c, h, w = a.shape
    if h * w == 0:
        raise ad.ShapeMismatchError("sem_attention: empty spatial extent")
    flat = ad.reshape(a, (c, h * w))
    b_feat = ad.matmul(params[prefix + "wb"], flat)
    c_feat = ad.matmul(params[prefix + "wc"], flat)
    d_feat = ad.matmul(params[prefix + "wd"], flat)
    energy = ad.matmul(ad.transpose(b_feat), c_feat)      # (W, W)
    attn = ad.softmax(energy, axis=0)
    mixed = ad.matmul(d_feat, attn)                       # (C, W)
    out = ad.add(ad.mul(params[prefix + "lam"], mixed), flat)
    return ad.reshape(out, (c, h, w))


def sem_attention_matrix(a: Tensor, params: dict, prefix: str = "") -> np.ndarray:
    """The normalized attention map itself (testing hook)."""
    c, h, w = a.shape
    flat = ad.reshape(a, (c, h * w))
    b_feat = ad.matmul(params[prefix + "wb"], flat)
    c_feat = ad.matmul(params[prefix + "wc"], flat)
    energy = ad.matmul(ad.transpose(b_feat), c_feat)
    return ad.softmax(energy, axis=0).data


# -- generator -------------------------------------------------------------------------


class Generator:
    """Encoder/decoder network deforming a fixed template icosphere."""

    def __init__(self, config: GeneratorConfig, params: dict | None = None):
        self.config = config
        self.template = make_icosphere(config.template_subdivisions)\
            .scaled(config.template_scale)
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        p: dict[str, Tensor] = {}
        cin = 1
        for i, cout in enumerate(cfg.enc_channels):
            _param(p, f"enc.s{i}.w1", _conv_init(rng, cout, cin, 3, dt))
            _param(p, f"enc.s{i}.b1", np.zeros(cout, dtype=dt))
            _param(p, f"enc.s{i}.w2", _conv_init(rng, cout, cout, 3, dt))
            _param(p, f"enc.s{i}.b2", np.zeros(cout, dtype=dt))
            _param(p, f"enc.s{i}.wp", _conv_init(rng, cout, cin, 1, dt))
            _param(p, f"enc.s{i}.bp", np.zeros(cout, dtype=dt))
            cin = cout
        _param(p, "enc.fc.w", _linear_init(rng, cin, cfg.dz, dt))
        _param(p, "enc.fc.b", np.zeros(cfg.dz, dtype=dt))

        c0, h0, w0 = cfg.dec_grid
        _param(p, "dec.fc.w", _linear_init(rng, cfg.dz, c0 * h0 * w0, dt))
        _param(p, "dec.fc.b", np.zeros(c0 * h0 * w0, dtype=dt))
        cin = c0
        for i, cout in enumerate(cfg.dec_channels):
            _param(p, f"dec.u{i}.w", _conv_init(rng, cout, cin, 3, dt))
            _param(p, f"dec.u{i}.b", np.zeros(cout, dtype=dt))
            cin = cout
        sem_c = cfg.dec_channels[cfg.sem_stage]
        inner = max(1, sem_c // 2)
        # projections act as 1x1 convs on (C, W)-flattened features
        _param(p, "dec.sem.wb", _linear_init(rng, sem_c, inner, dt).T.copy())
        _param(p, "dec.sem.wc", _linear_init(rng, sem_c, inner, dt).T.copy())
        _param(p, "dec.sem.wd", _linear_init(rng, sem_c, sem_c, dt).T.copy())
        _param(p, "dec.sem.lam", np.zeros(1, dtype=dt))

        up = 2 ** len(cfg.dec_channels)
        feat = cfg.dec_channels[-1] * (h0 * up) * (w0 * up)
        # small head init keeps the deformed mesh near the template at start
        _param(p, "dec.head.w", _linear_init(rng, feat, cfg.n_vertices * 3, dt, std=1e-4))
        _param(p, "dec.head.b", np.zeros(cfg.n_vertices * 3, dtype=dt))
        return p

    # ---- forward pieces ----

    def _res_stage(self, x: Tensor, i: int) -> Tensor:
        p = self.params
        h = ad.relu(ad.conv2d(x, p[f"enc.s{i}.w1"], p[f"enc.s{i}.b1"],
                              stride=2, padding=1))
        h = ad.conv2d(h, p[f"enc.s{i}.w2"], p[f"enc.s{i}.b2"], stride=1, padding=1)
        skip = ad.conv2d(x, p[f"enc.s{i}.wp"], p[f"enc.s{i}.bp"], stride=2, padding=0)
        return ad.relu(ad.add(h, skip))

    def encode_batch(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.data.ndim != 4 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
            raise SketchError(f"encoder expects (B, 1, {cfg.input_size}, "
                              f"{cfg.input_size}), got {x.shape}")
        h = x
        for i in range(len(cfg.enc_channels)):
            h = self._res_stage(h, i)
        pooled = ad.reduce_mean(h, axis=(2, 3))
        return ad.add(ad.matmul(pooled, self.params["enc.fc.w"]),
                      self.params["enc.fc.b"])

    def decode_batch(self, z: Tensor) -> Tensor:
        cfg = self.config
        if z.data.ndim != 2 or z.shape[1] != cfg.dz:
            raise ad.ShapeMismatchError(f"decode: expected (B, {cfg.dz}), got {z.shape}")
        p = self.params
        bsz = z.shape[0]
        c0, h0, w0 = cfg.dec_grid
        h = ad.relu(ad.add(ad.matmul(z, p["dec.fc.w"]), p["dec.fc.b"]))
        h = ad.reshape(h, (bsz, c0, h0, w0))
        for i in range(len(cfg.dec_channels)):
            h = ad.upsample_nearest2x(h)
            h = ad.relu(ad.conv2d(h, p[f"dec.u{i}.w"], p[f"dec.u{i}.b"],
                                  stride=1, padding=1))
            if cfg.use_sem and i == cfg.sem_stage:
                h = ad.stack([sem_attention(h[b], p, "dec.sem.") for b in range(bsz)],
                             axis=0)
        flat = ad.reshape(h, (bsz, -1))
        raw = ad.add(ad.matmul(flat, p["dec.head.w"]), p["dec.head.b"])
        out = ad.tanh(raw) * cfg.max_offset
        return ad.reshape(out, (bsz, cfg.n_vertices, 3))

    # ---- public single-sample ops ----

    def encode(self, sketch: np.ndarray) -> ShapeCode:
        arr = validate_sketch(sketch, self.config.input_size, require_stroke=False)
        x = Tensor(arr[None, None].astype(self.config.dtype))
        return ShapeCode(self.encode_batch(x)[0, :])

    def decode(self, code: ShapeCode) -> Tensor:
        z = code.z
        if z.data.ndim != 1 or z.shape[0] != self.config.dz:
            raise ad.ShapeMismatchError(
                f"decode: shape code must be ({self.config.dz},), got {z.shape}")
        return self.decode_batch(ad.reshape(z, (1, self.config.dz)))[0]

    def generate(self, sketch: np.ndarray, detach: bool = True) -> Mesh:
        offsets = self.decode(self.encode(sketch))
        if detach:
            offsets = offsets.detach()
        return apply_offsets(self.template, offsets)


# -- discriminator ----------------------------------------------------------------------


class Discriminator:
    """Scores channel-stacked multi-view silhouettes with a single logit."""

    def __init__(self, config: DiscriminatorConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        self.forward_calls = 0

    def _init_params(self) -> dict:
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        p: dict[str, Tensor] = {}
        cin = cfg.n_views
        for i, cout in enumerate(cfg.channels):
            _param(p, f"disc.s{i}.w", _conv_init(rng, cout, cin, 3, dt))
            _param(p, f"disc.s{i}.b", np.zeros(cout, dtype=dt))
            cin = cout
        spatial = cfg.resolution // (2 ** len(cfg.channels))
        _param(p, "disc.fc.w", _linear_init(rng, cin * spatial * spatial, 1, dt))
        _param(p, "disc.fc.b", np.zeros(1, dtype=dt))
        return p

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.data.ndim != 4 or x.shape[1] != cfg.n_views \
                or x.shape[2] != cfg.resolution or x.shape[3] != cfg.resolution:
            raise ad.ShapeMismatchError(
                f"discriminator expects (B, {cfg.n_views}, {cfg.resolution}, "
                f"{cfg.resolution}), got {x.shape}")
        self.forward_calls += 1
        h = x
        for i in range(len(cfg.channels)):
            h = ad.leaky_relu(ad.conv2d(h, self.params[f"disc.s{i}.w"],
                                        self.params[f"disc.s{i}.b"],
                                        stride=2, padding=1), alpha=0.2)
        flat = ad.reshape(h, (x.shape[0], -1))
        out = ad.add(ad.matmul(flat, self.params["disc.fc.w"]),
                     self.params["disc.fc.b"])
        return ad.reshape(out, (x.shape[0],))

    __call__ = forward
