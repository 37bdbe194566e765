"""Dense-tensor engine with reverse-mode automatic differentiation.

Every differentiable computation in this package (networks, losses, the
soft rasterizer) runs on these Tensors. The computation graph is built
eagerly as closures hanging off each output tensor and is discarded once
``backward`` has run. float64 is used by the verification suites (finite
differences are unreliable in float32), float32 for training speed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "tensor",
    "zeros",
    "backward",
    "grad_check",
    "matmul",
    "conv2d",
    "upsample_nearest2x",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "softmax",
    "reshape",
    "transpose",
    "reduce_sum",
    "reduce_mean",
    "gather_rows",
    "stack",
    "concat",
]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes violate an op's shape rule."""


def _require(cond: bool, op: str, msg: str):
    if not cond:
        raise ShapeMismatchError(f"{op}: {msg}")


class Tensor:
    """N-d array plus the bookkeeping needed to replay vector-Jacobian products.

    ``data`` is immutable by convention after construction; only ``grad``
    mutates, and only during a single backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, *, dtype=None,
                 _parents: tuple = (), _vjp: Callable | None = None, _op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    # -- graph construction helpers -------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, Tensor._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, Tensor._coerce(other))

    def __rsub__(self, other):
        return sub(Tensor._coerce(other), self)

    def __mul__(self, other):
        return mul(self, Tensor._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, Tensor._coerce(other))

    def __rtruediv__(self, other):
        return div(Tensor._coerce(other), self)

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.dtype)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp, _op=op)


# -- backward pass -------------------------------------------------------------


def backward(out: Tensor):
    """Reverse-mode sweep from a scalar output.

    Visits each recorded op exactly once in reverse topological order;
    gradients accumulate additively where a tensor feeds multiple ops.
    """
    if out.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {out.shape}")
    if not out.requires_grad:
        raise ValueError("backward: output does not require grad")

    # Iterative topo sort; graphs get deep enough to overflow recursion.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    out.grad = np.ones_like(out.data)
    for node in reversed(order):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)
            # the eager graph is single-use; drop references promptly
            node._vjp = None
            node._parents = ()


# -- broadcasting helpers --------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise binary ops ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), vjp, "div")


# -- matmul / linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2, "matmul",
             f"expects 2-d operands, got {a.shape} and {b.shape}")
    _require(a.shape[1] == b.shape[0], "matmul",
             f"inner dims differ: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), vjp, "matmul")


# -- elementwise unary ops ----------------------------------------------------------


def _unary(a: Tensor, out_data: np.ndarray, dlocal: Callable[[], np.ndarray], op: str) -> Tensor:
    def vjp(g):
        if a.requires_grad:
            a._accumulate(g * dlocal())

    return _make(out_data, (a,), vjp, op)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _unary(a, out, lambda: (a.data > 0).astype(a.dtype), "relu")


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    out = np.where(a.data > 0, a.data, alpha * a.data)
    return _unary(a, out, lambda: np.where(a.data > 0, 1.0, alpha).astype(a.dtype), "leaky_relu")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form never exponentiates a positive argument
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return _unary(a, s, lambda: s * (1.0 - s), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _unary(a, t, lambda: 1.0 - t * t, "tanh")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _unary(a, e, lambda: e, "exp")


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data, "log")


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)
    return _unary(a, r, lambda: 0.5 / r, "sqrt")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), stable out to |x| ~ 1e4 and beyond."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _unary(a, out, lambda: _stable_sigmoid(x), "softplus")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out = np.maximum(a.data, floor)
    return _unary(a, out, lambda: (a.data > floor).astype(a.dtype), "clamp_min")


def softmax(a: Tensor, axis: int) -> Tensor:
    """Softmax over ``axis`` with max-subtraction for stability."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            a._accumulate(s * (g - inner))

    return _make(s, (a,), vjp, "softmax")


# -- shape ops -------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    new_shape = tuple(shape)
    _require(np.prod(a.shape, dtype=int) == abs(np.prod(new_shape, dtype=int)) or -1 in new_shape,
             "reshape", f"cannot reshape {a.shape} to {new_shape}")
    out_data = a.data.reshape(new_shape)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), vjp, "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out_data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), vjp, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def vjp(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(out_data, (a,), vjp, "getitem")


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup a[indices] along axis 0; backward scatter-adds."""
    idx = np.asarray(indices)
    _require(idx.size == 0 or (idx.min() >= 0 and idx.max() < a.shape[0]),
             "gather_rows", f"index out of range for axis 0 of {a.shape}")
    out_data = a.data[idx]

    def vjp(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(out_data, (a,), vjp, "gather_rows")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    _require(len(ts) > 0, "stack", "empty input list")
    _require(all(t.shape == ts[0].shape for t in ts), "stack",
             f"mismatched shapes {[t.shape for t in ts]}")
    out_data = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        parts = np.split(g, len(ts), axis=axis)
        for t, part in zip(ts, parts):
            if t.requires_grad:
                t._accumulate(np.squeeze(part, axis=axis))

    return _make(out_data, ts, vjp, "stack")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    _require(len(ts) > 0, "concat", "empty input list")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        parts = np.split(g, splits, axis=axis)
        for t, part in zip(ts, parts):
            if t.requires_grad:
                t._accumulate(part)

    return _make(out_data, ts, vjp, "concat")


# -- reductions -----------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), vjp, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def vjp(g):
        if not a.requires_grad:
            return
        gg = g / count
        if axis is None:
            a._accumulate(np.broadcast_to(gg, a.shape).copy())
            return
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _make(out_data, (a,), vjp, "mean")


# -- convolution ------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                    # (B, C, OH, OW, KH, KW)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-d convolution, NCHW input and OIHW kernel, via im2col + BLAS."""
    _require(x.data.ndim == 4, "conv2d", f"input must be NCHW, got {x.shape}")
    _require(w.data.ndim == 4, "conv2d", f"kernel must be OIHW, got {w.shape}")
    _require(x.shape[1] == w.shape[1], "conv2d",
             f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    bsz, cin, _, _ = x.shape
    cout, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    w_mat = w.data.reshape(cout, cin * kh * kw)
    out_mat = cols @ w_mat.T                               # (B*OH*OW, Cout)
    out_data = out_mat.reshape(bsz, oh, ow, cout).transpose(0, 3, 1, 2)
    if b is not None:
        _require(b.shape == (cout,), "conv2d", f"bias shape {b.shape} != ({cout},)")
        out_data = out_data + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(bsz * oh * ow, cout)
        if b is not None and b.requires_grad:
            b._accumulate(g_mat.sum(axis=0))
        if w.requires_grad:
            # recompute cols rather than caching them: memory stays flat
            cols_b, _, _ = _im2col(x.data, kh, kw, stride, padding)
            w._accumulate((g_mat.T @ cols_b).reshape(w.shape))
        if x.requires_grad:
            g_cols = (g_mat @ w_mat).reshape(bsz, oh, ow, cin, kh, kw)
            hp, wp = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
            gx_pad = np.zeros((bsz, cin, hp, wp), dtype=g.dtype)
            for ki in range(kh):
                for kj in range(kw):
                    gx_pad[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += \
                        g_cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            if padding:
                gx_pad = gx_pad[:, :, padding:-padding, padding:-padding]
            x._accumulate(gx_pad)

    return _make(out_data, parents, vjp, "conv2d")


def upsample_nearest2x(x: Tensor) -> Tensor:
    _require(x.data.ndim == 4, "upsample_nearest2x", f"input must be NCHW, got {x.shape}")
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        if x.requires_grad:
            b, c, h2, w2 = g.shape
            x._accumulate(g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _make(out_data, (x,), vjp, "upsample_nearest2x")


# -- verification ------------------------------------------------------------------


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map ``point`` to a scalar Tensor. The error metric is
    |analytic - numeric| / max(1, |numeric|), maximized over coordinates.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    x0 = point.data.astype(np.float64)

    p = Tensor(x0.copy(), requires_grad=True)
    out = fn(p)
    if out.size != 1:
        raise ValueError(f"grad_check: fn output must be scalar, got {out.shape}")
    backward(out)
    analytic = p.grad.reshape(-1).copy()

    flat = x0.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = fn(Tensor((flat + bump).reshape(x0.shape))).item()
        lo = fn(Tensor((flat - bump).reshape(x0.shape))).item()
        numeric[i] = (hi - lo) / (2 * eps)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
