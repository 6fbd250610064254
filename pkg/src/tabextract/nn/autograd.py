"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every op broadcasts over leading dimensions, so a forward pass can carry an
extra batch of parameter copies in front (used by the finite-difference
checker). Values are float64 throughout.
"""
from __future__ import annotations

import contextlib
from functools import lru_cache
from typing import Callable, List, Optional, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Optional[Callable[[np.ndarray], None]] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(as_tensor(o)))

    def __rsub__(self, o):
        return add(as_tensor(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _acc(a, g)
        _acc(b, g)
    return _node(a.data + b.data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: _acc(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)
    return _node(a.data * b.data, (a, b), back)


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.data * k, (a,), lambda g: _acc(a, g * k))


def logistic(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and several times faster than scipy's expit here
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(a: Tensor) -> Tensor:
    out = logistic(a.data)
    return _node(out, (a,), lambda g: _acc(a, g * out * (1.0 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: _acc(a, g * (1.0 - out * out)))


class KinkMonitor:
    """Smallest |pre-activation| fed to relu while active.

    Finite differences are meaningless within one step of a kink, so gradient
    checks use this to reject evaluation points that sit on one.
    """

    def __init__(self):
        self.margin = float("inf")


_monitors: List[KinkMonitor] = []


@contextlib.contextmanager
def watch_kinks():
    mon = KinkMonitor()
    _monitors.append(mon)
    try:
        yield mon
    finally:
        _monitors.remove(mon)


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    if _monitors and a.data.size:
        m = float(np.abs(a.data).min())
        for mon in _monitors:
            mon.margin = min(mon.margin, m)
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: _acc(a, g * on))


# --------------------------------------------------------------------------
# linear algebra and shape


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            _acc(a, g @ _swap_last(b.data))
        if b.requires_grad:
            _acc(b, _swap_last(a.data) @ g)
    return _node(a.data @ b.data, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: _acc(a, g.reshape(a.shape)))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _node(np.swapaxes(a.data, i, j), (a,), lambda g: _acc(a, np.swapaxes(g, i, j)))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (view) indexing only: ints, slices, Ellipsis."""
    def back(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += g
    return _node(a.data[idx], (a,), back)


def unstack(a: Tensor, axis: int) -> List[Tensor]:
    """Split along ``axis`` into views that accumulate straight into ``a.grad``."""
    axis = axis % a.ndim
    pre = (slice(None),) * axis
    return [getitem(a, pre + (k,)) for k in range(a.shape[axis])]


def stack(ts: Sequence[Tensor], axis: int) -> Tensor:
    shape = np.broadcast_shapes(*(t.shape for t in ts))
    data = np.stack([np.broadcast_to(t.data, shape) for t in ts], axis=axis)

    def back(g):
        for k, t in enumerate(ts):
            if t.requires_grad:
                _acc(t, np.take(g, k, axis=axis))
    return _node(data, tuple(ts), back)


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along the last axis, broadcasting the leading ones."""
    if axis != -1:
        raise NotImplementedError("concat supports axis=-1 only")
    lead = np.broadcast_shapes(*(t.shape[:-1] for t in ts))
    parts = [np.broadcast_to(t.data, lead + t.shape[-1:]) for t in ts]
    bounds = np.cumsum([0] + [t.shape[-1] for t in ts])

    def back(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                _acc(t, g[..., lo:hi])
    return _node(np.concatenate(parts, axis=-1), tuple(ts), back)


def take(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: rows of ``weight`` (axis -2) selected by integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.take(weight.data, ids, axis=-2)
    lead = weight.shape[:-2]

    def back(g):
        d = weight.shape[-1]
        flat = np.moveaxis(g.reshape(lead + (ids.size, d)), -2, 0)
        dw = np.zeros((weight.shape[-2],) + lead + (d,))
        np.add.at(dw, ids.ravel(), flat)
        _acc(weight, np.moveaxis(dw, 0, -2))
    return _node(out, (weight,), back)


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """``out[..., n, t, :] = x[..., n, idx[n, t], :]`` for x of shape (..., N, S, D)."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(idx.shape[0])[:, None]
    sel = (Ellipsis, rows, idx, slice(None))

    def back(g):
        dx = np.zeros(g.shape[:-3] + x.shape[-3:])
        np.add.at(dx, sel, g)
        _acc(x, dx)
    return _node(x.data[sel], (x,), back)


# --------------------------------------------------------------------------
# fused ops


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _acc(a, out * (g - (g * out).sum(axis=-1, keepdims=True)))
    return _node(out, (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        _acc(beta, g)
        _acc(gamma, g * xhat)
        if x.requires_grad:
            gx = g * gamma.data
            d = x.shape[-1]
            dx = inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _acc(x, dx)
    return _node(out, (x, gamma, beta), back)


@lru_cache(maxsize=None)
def _gate_scale(H: int) -> np.ndarray:
    scale = np.full(4 * H, 0.5)
    scale[2 * H:3 * H] = 1.0
    return scale


def lstm_cell(gx: Tensor, h: Tensor, c: Tensor, w_hh: Tensor,
              mask: Optional[np.ndarray] = None) -> Tensor:
    """One LSTM step, returning ``[h_next, c_next]`` concatenated on the last axis.

    ``gx`` holds the input projection plus both biases, gates ordered
    (input, forget, cell, output). Where ``mask`` is 0 the state passes
    through unchanged, which lets padded positions be skipped in a batch.
    """
    H = h.shape[-1]
    z = gx.data + h.data @ w_hh.data
    # one tanh for all four gates; sigmoid(x) = (tanh(x / 2) + 1) / 2
    t = np.tanh(z * _gate_scale(H))
    s = 0.5 * t + 0.5
    i, f, o = s[..., :H], s[..., H:2 * H], s[..., 3 * H:]
    u = t[..., 2 * H:3 * H]
    c_new = f * c.data + i * u
    tc = np.tanh(c_new)
    h_new = o * tc
    shape = np.broadcast_shapes(h_new.shape, c_new.shape, h.shape, c.shape)
    out = np.empty(shape[:-1] + (2 * H,))
    if mask is not None:
        # where mask is 0 this is exactly the old state
        np.add(h.data, mask * (h_new - h.data), out=out[..., :H])
        np.add(c.data, mask * (c_new - c.data), out=out[..., H:])
    else:
        out[..., :H] = h_new
        out[..., H:] = c_new

    def back(g):
        dh, dc = g[..., :H], g[..., H:]
        if mask is not None:
            dh_new, dc_new = mask * dh, mask * dc
        else:
            dh_new, dc_new = dh, dc
        dct = dc_new + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate([dct * u * i * (1.0 - i),
                             dct * c.data * f * (1.0 - f),
                             dct * i * (1.0 - u * u),
                             dh_new * tc * o * (1.0 - o)], axis=-1)
        _acc(gx, dz)
        if h.requires_grad:
            dh_prev = dz @ _swap_last(w_hh.data)
            if mask is not None:
                dh_prev = dh_prev + (1.0 - mask) * dh
            _acc(h, dh_prev)
        if c.requires_grad:
            dc_prev = dct * f
            if mask is not None:
                dc_prev = dc_prev + (1.0 - mask) * dc
            _acc(c, dc_prev)
        if w_hh.requires_grad:
            _acc(w_hh, _swap_last(h.data) @ dz)
    return _node(out, (gx, h, c, w_hh), back)


def bce_with_logits(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked mean binary cross-entropy over the trailing ``mask.ndim`` axes."""
    z = logits.data
    y = np.asarray(labels, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    axes = tuple(range(-m.ndim, 0))
    count = m.sum()
    if count == 0:
        raise ValueError("loss over an empty mask")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = (per * m).sum(axis=axes) / count

    def back(g):
        g = np.reshape(g, np.shape(g) + (1,) * m.ndim)
        _acc(logits, g * (logistic(z) - y) * m / count)
    return _node(out, (logits,), back)
