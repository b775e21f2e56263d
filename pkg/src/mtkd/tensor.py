"""Dense NHWC tensors with a reverse-mode autodiff tape.

Every op records a node holding its inputs and a backward closure. Nodes are
numbered in creation order; :meth:`Tensor.backward` walks the reachable
subgraph in strict reverse creation order and accumulates into ``.grad``.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

_DTYPES = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float32}
_local = threading.local()
_counter = itertools.count()


class DimensionError(ValueError):
    """Raised when tensor shapes violate an op's contract."""


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _state["dtype"] = _DTYPES[name]


def get_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default element type (``f32`` or ``f64``)."""
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = old


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or _state["dtype"]
        arr = np.asarray(data)
        if arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_counter)
        self.op = "leaf"
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numel(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- autodiff ---------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            # intermediates may alias a buffer that is still propagating; leaves own theirs
            if self._backward is None:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
            else:
                self.grad = np.asarray(g, dtype=self.data.dtype)
        elif self._backward is None:
            self.grad += g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _scalar_error(shape):
    raise DimensionError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_counter)
    out.op = op
    out.name = None
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad tensor reachable from ``loss``.

    Gradients accumulate across calls until :func:`zero_grad` is used.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        t._accumulate(g)
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


# ---------------------------------------------------------------------------
# elementwise and linear kernels


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _coerce(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is ``[in, out]``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    xd = x.data.reshape(-1, x.shape[-1])
    wd = weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, wd.shape[1])

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape)
        gw = xd.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, bw, "linear")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), bw, "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = special.expit(x.data).astype(x.data.dtype)

    def bw(g):
        return (g * y * (1 - y),)

    return _make(y, (x,), bw, "sigmoid")


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd * _SQRT_HALF))
    out = (xd * cdf).astype(xd.dtype)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype),)

    return _make(out, (x,), bw, "gelu")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def bw(g):
        gy = g * y
        gy -= y * gy.sum(axis=-1, keepdims=True)
        return (gy,)

    return _make(y, (x,), bw, "softmax")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.data.dtype)
    return _make(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def l1_loss(x: Tensor, y) -> Tensor:
    """Elementwise-mean absolute difference. Subgradient at zero is zero."""
    y = _coerce(y, x)
    if x.shape != y.shape:
        raise DimensionError(f"l1_loss shapes differ: {x.shape} vs {y.shape}")
    diff = x.data - y.data
    n = diff.size
    out = np.asarray(np.abs(diff).sum() / n, dtype=x.data.dtype)

    def bw(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _make(out, (x, y), bw, "l1")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis by default)."""
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(
                f"concat: shapes {[tuple(t.shape) for t in tensors]} disagree off axis {ax}"
            )
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape

    def bw(g):
        return (g.reshape(src),)

    return _make(x.data.reshape(shape), (x,), bw, "reshape")


def permute(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw, "permute")


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    neg = tuple(-s for s in shifts)

    def bw(g):
        return (np.roll(g, neg, axis=axes),)

    return _make(np.roll(x.data, shifts, axis=axes), (x,), bw, "roll")


def getitem(x: Tensor, idx) -> Tensor:
    src = x.shape
    dt = x.data.dtype

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(src, dtype=dt)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), bw, "getitem")


def reflect_pad(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad NHWC spatial dims at the bottom/right edge."""
    if pad_h == 0 and pad_w == 0:
        return x
    _, h, w, _ = x.shape
    if pad_h >= h or pad_w >= w:
        raise DimensionError(f"reflect_pad: pad ({pad_h},{pad_w}) must be smaller than dims ({h},{w})")
    rows = np.pad(np.arange(h), (0, pad_h), mode="reflect")
    cols = np.pad(np.arange(w), (0, pad_w), mode="reflect")
    return getitem(x, (slice(None), rows[:, None], cols[None, :], slice(None)))


# ---------------------------------------------------------------------------
# image kernels


def _check_nhwc(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected NHWC input, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: str = "same") -> Tensor:
    """2-D cross-correlation on NHWC input with a ``[kh, kw, Cin, Cout]`` kernel."""
    _check_nhwc(x, "conv2d")
    kh, kw, cin, cout = weight.shape
    n, h, w, c = x.shape
    if c != cin:
        raise DimensionError(f"conv2d: input axis C={c} does not match weight axis Cin={cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match weight axis Cout={cout}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise DimensionError(f"conv2d: same padding needs odd kernel dims, got kh={kh}, kw={kw}")
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    elif padding == "valid":
        ph = pw = 0
        xp = x.data
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    oh, ow = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    cols = np.empty((n, oh, ow, kh, kw, cin), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + oh, j : j + ow, :]
    cols2 = cols.reshape(n * oh * ow, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols2 @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, oh, ow, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols2.T @ g2).reshape(weight.shape)
        gcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, cin)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + oh, j : j + ow, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, ph : ph + h, pw : pw + w, :] if padding == "same" else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv2d")


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Space-to-depth: ``N,H,W,C -> N,H/s,W/s,C*s*s``.

    Output channel ``(dy*s + dx)*C + c`` holds input pixel ``(s*i+dy, s*j+dx, c)``.
    """
    _check_nhwc(x, "pixel_unshuffle")
    n, h, w, c = x.shape
    if h % s or w % s:
        raise DimensionError(f"pixel_unshuffle: H={h}, W={w} must be divisible by factor {s}")
    y = reshape(x, (n, h // s, s, w // s, s, c))
    y = permute(y, (0, 1, 3, 2, 4, 5))
    return reshape(y, (n, h // s, w // s, s * s * c))


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Depth-to-space; exact inverse of :func:`pixel_unshuffle`."""
    _check_nhwc(x, "pixel_shuffle")
    n, h, w, c = x.shape
    if c % (s * s):
        raise DimensionError(f"pixel_shuffle: C={c} must be divisible by factor^2={s * s}")
    co = c // (s * s)
    y = reshape(x, (n, h, w, s, s, co))
    y = permute(y, (0, 1, 3, 2, 4, 5))
    return reshape(y, (n, h * s, w * s, co))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must match last axis ({c},)"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx_hat = g * gamma.data
        gx = rstd * (
            gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx.astype(xd.dtype), gg, gb

    return _make(out.astype(xd.dtype), (x, gamma, beta), bw, "layer_norm")
