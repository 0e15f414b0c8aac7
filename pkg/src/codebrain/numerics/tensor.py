"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray plus an optional gradient buffer. Operations
record a closure that maps the output gradient to parent gradients; calling
`backward` on a scalar walks the recorded graph once in reverse topological
order and accumulates into `.grad`. The tape is consumed by the walk, so a
second `backward` through the same graph raises instead of silently reusing
stale closures.

Storage is float32 by default; float64 inputs stay float64 end to end, which
is what the finite-difference checker relies on. Reductions (`sum`, `mean`)
and the transform primitives always accumulate in 64-bit before casting back.

Only the primitives this package needs are implemented. Convolution and
spectral convolution are first-class differentiable ops rather than
compositions, because they dominate runtime and their adjoints are exact.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import fourier

__all__ = [
    "Tensor",
    "MissingGradientError",
    "backward",
    "no_grad",
    "concat",
    "stack",
    "take_rows",
    "softmax",
    "cross_entropy",
    "conv1d",
    "fft_convolve",
    "repeat_last",
    "pad_axis",
]


class MissingGradientError(RuntimeError):
    """Raised when backward is asked to differentiate a detached graph."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Context that disables graph recording; outputs come back detached."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(np.float32)
    arr = np.asarray(data, dtype=np.float64 if dtype is None else dtype)
    if dtype is None:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """An ndarray with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._done = False

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, _wrap(other))

    def __rsub__(self, other):
        return _sub(_wrap(other), self)

    def __mul__(self, other):
        return _mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, _wrap(other))

    def __rtruediv__(self, other):
        return _div(_wrap(other), self)

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        d = self.data
        out = d**p

        def vjp(g):
            return (g * p * d ** (p - 1),)

        return _from_op(out, (self,), vjp)

    def __matmul__(self, other):
        return _matmul(self, _wrap(other))

    def __getitem__(self, key):
        d = self.data
        out = d[key]
        shape = d.shape

        def vjp(g):
            buf = np.zeros(shape, dtype=g.dtype)
            buf[key] += g  # keys are basic slices: disjoint writes
            return (buf,)

        return _from_op(out, (self,), vjp)

    # ---- pointwise functions -------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _from_op(out, (self,), lambda g: (g * out,))

    def log(self):
        d = self.data
        return _from_op(np.log(d), (self,), lambda g: (g / d,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return _from_op(out, (self,), lambda g: (g / (2.0 * out),))

    def tanh(self):
        out = np.tanh(self.data)
        return _from_op(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        d = self.data
        # evaluate the numerically safe branch on each side of zero
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.where(
                d >= 0, 1.0 / (1.0 + np.exp(-d)), np.exp(d) / (1.0 + np.exp(d))
            ).astype(d.dtype)
        return _from_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def relu(self):
        d = self.data
        return _from_op(np.maximum(d, 0.0), (self,), lambda g: (g * (d > 0),))

    def elu(self, alpha: float = 1.0):
        d = self.data
        neg = alpha * np.expm1(np.minimum(d, 0.0))
        out = np.where(d > 0, d, neg).astype(d.dtype)

        def vjp(g):
            return (g * np.where(d > 0, 1.0, neg + alpha),)

        return _from_op(out, (self,), vjp)

    def abs(self):
        d = self.data
        return _from_op(np.abs(d), (self,), lambda g: (g * np.sign(d),))

    # ---- reductions (64-bit accumulation) --------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        d = self.data
        out = d.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(d.dtype)

        def vjp(g):
            return (_spread(g, d.shape, axis, keepdims),)

        return _from_op(out, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        d = self.data
        out = d.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(d.dtype)
        count = d.size if axis is None else np.prod([d.shape[a] for a in _axes(axis, d.ndim)])

        def vjp(g):
            return (_spread(g, d.shape, axis, keepdims) / count,)

        return _from_op(out, (self,), vjp)

    # ---- shape ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        d = self.data
        return _from_op(d.reshape(shape), (self,), lambda g: (g.reshape(d.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _from_op(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),)
        )

    def swapaxes(self, a: int, b: int):
        return _from_op(
            self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),)
        )


# ---- graph plumbing ------------------------------------------------------


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._done = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def _spread(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back over the reduced axes."""
    if axis is not None and not keepdims:
        for a in sorted(_axes(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _from_op(out, (a, b), vjp)


def _sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _from_op(out, (a, b), vjp)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    da, db = a.data, b.data
    out = da * db

    def vjp(g):
        return (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape))

    return _from_op(out, (a, b), vjp)


def _div(a: Tensor, b: Tensor) -> Tensor:
    da, db = a.data, b.data
    out = da / db

    def vjp(g):
        ga = _unbroadcast(g / db, da.shape)
        gb = _unbroadcast(-g * da / (db * db), db.shape)
        return (ga, gb)

    return _from_op(out, (a, b), vjp)


def _matmul(a: Tensor, b: Tensor) -> Tensor:
    da, db = a.data, b.data
    if da.ndim < 2 or db.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D; reshape vectors first")
    out = da @ db

    def vjp(g):
        ga = _unbroadcast(g @ db.swapaxes(-1, -2), da.shape)
        gb = _unbroadcast(da.swapaxes(-1, -2) @ g, db.shape)
        return (ga, gb)

    return _from_op(out, (a, b), vjp)


# ---- structural ops -------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _from_op(out, tuple(tensors), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("stack needs at least one tensor")
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(p.squeeze(axis=axis) for p in parts)

    return _from_op(out, tuple(tensors), vjp)


def take_rows(table: Tensor, idx) -> Tensor:
    """Row gather `table[idx]`; the adjoint scatter-adds duplicate rows."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError("row index out of range")
    d = table.data
    out = d[idx]

    def vjp(g):
        buf = np.zeros(d.shape, dtype=g.dtype)
        np.add.at(buf, idx, g)
        return (buf,)

    return _from_op(out, (table,), vjp)


def pad_axis(t: Tensor, axis: int, before: int, after: int) -> Tensor:
    if before < 0 or after < 0:
        raise ValueError("padding must be non-negative")
    d = t.data
    widths = [(0, 0)] * d.ndim
    widths[axis % d.ndim] = (before, after)
    out = np.pad(d, widths)
    sl = [slice(None)] * d.ndim
    sl[axis % d.ndim] = slice(before, before + d.shape[axis % d.ndim])
    sl = tuple(sl)

    def vjp(g):
        return (g[sl],)

    return _from_op(out, (t,), vjp)


def repeat_last(t: Tensor, reps: int) -> Tensor:
    """Nearest-neighbour upsampling of the last axis by an integer factor."""
    if reps < 1:
        raise ValueError("repeat factor must be >= 1")
    d = t.data
    out = np.repeat(d, reps, axis=-1)

    def vjp(g):
        return (g.reshape(d.shape + (reps,)).sum(axis=-1),)

    return _from_op(out, (t,), vjp)


# ---- fused numerical ops ---------------------------------------------------


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    d = t.data
    shifted = d - d.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = (e / e.sum(axis=axis, keepdims=True)).astype(d.dtype)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _from_op(s, (t,), vjp)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood of integer targets.

    `logits` has shape (..., K) and `targets` shape (...); the result has
    shape (...). Computed from shifted logits in float64 so the uniform-logit
    value is exact to ~1e-7 even in float32 storage.
    """
    idx = np.asarray(targets)
    d = logits.data
    k = d.shape[-1]
    if idx.shape != d.shape[:-1]:
        raise ValueError(f"targets shape {idx.shape} does not match logits {d.shape[:-1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ValueError(f"target index out of range for {k} classes")
    shifted = (d - d.max(axis=-1, keepdims=True)).astype(np.float64)
    e = np.exp(shifted)
    lse = np.log(e.sum(axis=-1))
    flat_idx = idx.reshape(-1)
    picked = shifted.reshape(-1, k)[np.arange(flat_idx.size), flat_idx]
    out = (lse - picked.reshape(lse.shape)).astype(d.dtype)
    prob = (e / e.sum(axis=-1, keepdims=True)).astype(d.dtype)

    def vjp(g):
        gr = prob.copy().reshape(-1, k)
        gr[np.arange(flat_idx.size), flat_idx] -= 1.0
        gr = gr.reshape(d.shape)
        return (gr * np.expand_dims(g, -1),)

    return _from_op(out, (logits,), vjp)


def _conv_windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    b, c, lp = xp.shape
    lout = (lp - k) // stride + 1
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (b, c, lout, k), (s0, s1, s2 * stride, s2), writeable=False
    )


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (B, Cin, L) with filters (Cout, Cin, k)."""
    xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ValueError("conv1d expects (B, Cin, L) input and (Cout, Cin, k) filters")
    if xd.shape[1] != wd.shape[1]:
        raise ValueError("channel mismatch between input and filters")
    k = wd.shape[2]
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad))) if pad else xd
    if xp.shape[2] < k:
        raise ValueError("input shorter than filter after padding")
    win = _conv_windows(xp, k, stride)
    out = np.einsum("bclk,ock->bol", win, wd, optimize=True)
    lout = out.shape[2]
    parents: tuple[Tensor, ...]
    if b is not None:
        out = out + b.data[:, None]
        parents = (x, w, b)
    else:
        parents = (x, w)
    out = out.astype(np.result_type(xd, wd), copy=False)

    def vjp(g):
        dw = np.einsum("bol,bclk->ock", g, win, optimize=True)
        dxp = np.zeros_like(xp, dtype=g.dtype)
        for t in range(k):
            dxp[:, :, t : t + stride * lout : stride] += np.einsum(
                "bol,oc->bcl", g, wd[:, :, t], optimize=True
            )
        dx = dxp[:, :, pad : pad + xd.shape[2]] if pad else dxp
        if b is not None:
            return (dx, dw, g.sum(axis=(0, 2)))
        return (dx, dw)

    return _from_op(out, parents, vjp)


def fft_convolve(u: Tensor, k: Tensor) -> Tensor:
    """Differentiable causal convolution of equal-length sequences.

    Leading axes broadcast. The adjoints are correlations, realized as
    flip-convolve-flip so the whole backward pass stays on the fast
    transform path.
    """
    u, k = _wrap(u), _wrap(k)
    ud, kd = u.data, k.data
    out = fourier.fft_convolve_arrays(ud, kd)

    def vjp(g):
        gf = g[..., ::-1]
        du = fourier.fft_convolve_arrays(gf, kd)[..., ::-1]
        dk = fourier.fft_convolve_arrays(gf, ud)[..., ::-1]
        return (
            _unbroadcast(du, ud.shape),
            _unbroadcast(dk, kd.shape),
        )

    return _from_op(out, (u, k), vjp)


# ---- backward -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar `loss` into every reachable tensor.

    Raises ValueError for non-scalar losses, MissingGradientError when the
    loss is detached from all gradient-requiring tensors, and RuntimeError
    when the graph's tape was already consumed by a previous call.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._done or (loss._parents and loss._vjp is None):
        raise RuntimeError(
            "backward was already run on this graph; rerun the forward pass to record a fresh tape"
        )
    if not loss.requires_grad:
        raise MissingGradientError(
            "loss is detached from every gradient-requiring tensor; nothing to differentiate"
        )

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        vjp = node._vjp
        if vjp is None:
            continue
        grads = vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.data.dtype, copy=True)
            else:
                parent.grad = parent.grad + g
        node._vjp = None  # consume the tape
    loss._done = True
