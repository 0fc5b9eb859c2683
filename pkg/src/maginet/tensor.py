"""Dense float tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a closure mapping the
output gradient to per-parent gradients. :func:`backward` walks the
recorded graph in reverse topological order.

Ops reject non-finite results at their boundary (:class:`NonFiniteError`)
so a diverging training run fails at the first bad op rather than
several layers later.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "zeros",
    "ones",
    "no_grad",
    "is_grad_enabled",
    "precision",
    "default_dtype",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "abs_",
    "clamp",
    "square",
    "tsum",
    "mean",
    "reshape",
    "concat",
    "matmul",
    "conv2d",
    "resample",
    "bilinear_matrix",
    "bilinear_resize",
    "avg_pool2",
    "pad_replicate",
    "pool_stats",
    "elementwise",
]


class TensorError(Exception):
    """Base class for tensor engine errors."""


class ShapeError(TensorError, ValueError):
    pass


class NonFiniteError(TensorError, FloatingPointError):
    pass


_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_dtype: contextvars.ContextVar[type] = contextvars.ContextVar("dtype", default=np.float32)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


def default_dtype():
    return _dtype.get()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def precision(dtype):
    """Run ops in ``dtype`` (float32 by default; float64 for gradient checks)."""
    token = _dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.reset(token)


ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """Row-major dense array plus optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "__weakref__")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        arr = np.array(data, dtype=default_dtype(), copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "leaf"
        return t

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data: ArrayLike, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=default_dtype()), requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor._wrap(np.ones(shape, dtype=default_dtype()), requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=default_dtype()))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: non-finite value in result")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    data = np.asarray(data)
    if data.dtype != default_dtype():
        data = data.astype(default_dtype())
    _check_finite(data, op)
    requires = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, requires)
    out._op = op
    if requires:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Gradients accumulate: call ``zero_grad`` on parameters between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, int]] = [(loss, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            st = state.get(id(node))
            if st == 2:
                continue
            if st == 1:
                raise TensorError("cycle in autodiff graph")
            state[id(node)] = 1
        if idx < len(node._parents):
            stack.append((node, idx + 1))
            parent = node._parents[idx]
            if parent.requires_grad:
                pst = state.get(id(parent))
                if pst == 1:
                    raise TensorError("cycle in autodiff graph")
                if pst is None:
                    stack.append((parent, 0))
        else:
            state[id(node)] = 2
            order.append(node)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), bw, "div")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0), (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def _open_interval_clip(y: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # keep saturated outputs strictly inside the open range
    lo_v = np.nextafter(y.dtype.type(lo), y.dtype.type(hi))
    hi_v = np.nextafter(y.dtype.type(hi), y.dtype.type(lo))
    return np.clip(y, lo_v, hi_v)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = _open_interval_clip(np.tanh(x.data), -1.0, 1.0)
    return _make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid_np(x.data).astype(x.data.dtype)
    y = np.clip(y, np.finfo(y.dtype).tiny, np.nextafter(y.dtype.type(1), y.dtype.type(0)))
    return _make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def abs_(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    return _make(d * d, (x,), lambda g: (2 * g * d,), "square")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; gradient is zero where clipping is active."""
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions / shape
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axes, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = _as_tensor(x)
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {orig} as {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(orig),), "reshape")


def getitem(x: Tensor, index) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    out = x.data[index]

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g) if _has_advanced(index) else _assign_add(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), bw, "getitem")


def _has_advanced(index) -> bool:
    idx = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def _assign_add(full, index, g):
    full[index] += g


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * nd
        out = []
        for i in range(len(ts)):
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW layout, via im2col."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ShapeError("conv2d: stride must be >= 1 and pad >= 0")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {h}x{w} (pad {pad}) smaller than kernel {kh}x{kw}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (k,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({k},)")
    _check_finite(x.data, "conv2d input")

    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    wm = weight.data.reshape(k, c * kh * kw)
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(n, c, ho * wo)
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo).reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, k, ho, wo)

    def bw(g):
        g2 = g.reshape(n, k, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wm.T, g2)
            if kh == 1 and kw == 1 and stride == 1:
                gxp = gcols.reshape(xp.shape)
            else:
                gcols = gcols.reshape(n, c, kh, kw, ho, wo)
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw if bias is not None else (lambda g: bw(g)[:2]), "conv2d")


# ---------------------------------------------------------------------------
# separable linear resampling (resize, pooling, padding)
# ---------------------------------------------------------------------------


def resample(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str = "resample") -> Tensor:
    """Apply ``rows @ X @ cols.T`` to the two trailing axes of ``x``."""
    x = _as_tensor(x)
    if x.ndim < 2 or rows.shape[1] != x.shape[-2] or cols.shape[1] != x.shape[-1]:
        raise ShapeError(f"{op}: operator shapes {rows.shape}/{cols.shape} do not match input {x.shape}")
    dt = x.data.dtype
    r = rows.astype(dt, copy=False)
    c = cols.astype(dt, copy=False)
    out = np.matmul(np.matmul(r, x.data), c.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(r.T, g), c),), op)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix for half-pixel-centre (align_corners=False) sampling."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[o, i0] += 1 - t
        m[o, i1] += t
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: target {out_h}x{out_w} must be positive")
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize: expected NCHW, got {x.shape}")
    h, w = x.shape[-2:]
    return resample(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w), "bilinear_resize")


def _pool_matrix(n: int) -> np.ndarray:
    if n % 2:
        raise ShapeError(f"avg_pool2: extent {n} is odd")
    m = np.zeros((n // 2, n))
    idx = np.arange(n // 2)
    m[idx, 2 * idx] = 0.5
    m[idx, 2 * idx + 1] = 0.5
    return m


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2."""
    x = _as_tensor(x)
    h, w = x.shape[-2:]
    return resample(x, _pool_matrix(h), _pool_matrix(w), "avg_pool2")


def _replicate_matrix(n: int, p: int) -> np.ndarray:
    idx = np.clip(np.arange(-p, n + p), 0, n - 1)
    m = np.zeros((n + 2 * p, n))
    m[np.arange(n + 2 * p), idx] = 1.0
    return m


def pad_replicate(x: Tensor, p: int) -> Tensor:
    h, w = x.shape[-2:]
    return resample(x, _replicate_matrix(h, p), _replicate_matrix(w, p), "pad_replicate")


# ---------------------------------------------------------------------------
# pooled statistics for attention
# ---------------------------------------------------------------------------


def pool_stats(x: Tensor, kind: str) -> Tensor:
    """Pooled statistics of an NCHW tensor.

    ``global_avg`` -> [N, C]; ``channel_avg`` / ``channel_max`` -> [N, 1, H, W].
    The max routes its gradient to the first maximal channel.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pool_stats: expected NCHW, got {x.shape}")
    if kind == "global_avg":
        return mean(x, axis=(2, 3))
    if kind == "channel_avg":
        return mean(x, axis=1, keepdims=True)
    if kind == "channel_max":
        arg = np.argmax(x.data, axis=1)[:, None]
        out = np.take_along_axis(x.data, arg, axis=1)
        shape = x.shape

        def bw(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.put_along_axis(full, arg, g, axis=1)
            return (full,)

        return _make(out, (x,), bw, "channel_max")
    raise ValueError(f"pool_stats: unknown kind {kind!r}")


_ELEMENTWISE = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "mul": mul,
    "add": add,
}


def elementwise(kind: str, *inputs, axis: int = 1) -> Tensor:
    """Dispatch by name; ``concat_channels`` stacks along the channel axis."""
    if kind == "concat_channels":
        return concat(inputs, axis=axis)
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"elementwise: unknown kind {kind!r}") from None
    return fn(*inputs)

