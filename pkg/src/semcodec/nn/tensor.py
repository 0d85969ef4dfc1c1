"""Eager reverse-mode differentiation over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. ``loss.backward()`` walks
the recorded graph once in reverse topological order and then releases it.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError, StateError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_released")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op
        self._released = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if self._released:
            raise StateError("graph already consumed by a previous backward()")
        if self._backward is None:
            raise StateError("backward() called on a tensor that no forward op produced")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._released = True

    # operator sugar
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
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, False, (), None, op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)), "mul")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def log(x, floor: float = 1e-12) -> Tensor:
    """Natural log of ``max(x, floor)``."""
    x = as_tensor(x)
    v = np.maximum(x.data, floor)
    return _make(np.log(v), (x,), lambda g: (np.where(x.data > floor, g / v, 0.0),), "log")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _make(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),), "silu")


# -- shape ops ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if b.ndim == 2 and a.ndim >= 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "matmul")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {x.shape} -> {shape}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in ts]}") from exc
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), backward, "getitem")


def gather(table, indices) -> Tensor:
    """Rows of ``table`` selected by an integer array (embedding lookup)."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather: index out of range for table of {table.shape[0]} rows")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return _make(table.data[idx], (table,), backward, "gather")


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# -- normalization and losses ------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv
    parents = [x]
    g_t = as_tensor(gamma) if gamma is not None else None
    b_t = as_tensor(beta) if beta is not None else None
    y = xhat
    if g_t is not None:
        if g_t.shape != x.shape[-1:]:
            raise ShapeError(f"layer_norm: gamma {g_t.shape} vs features {x.shape[-1]}")
        y = y * g_t.data
        parents.append(g_t)
    if b_t is not None:
        y = y + b_t.data
        parents.append(b_t)

    def backward(g):
        dxhat = g * g_t.data if g_t is not None else g
        dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(-1, keepdims=True))
        out = [dx]
        lead = tuple(range(g.ndim - 1))
        if g_t is not None:
            out.append((g * xhat).sum(axis=lead))
        if b_t is not None:
            out.append(g.sum(axis=lead))
        return tuple(out)

    return _make(y, parents, backward, "layer_norm")


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size
    return _make(np.array((d * d).sum() / n), (a, b),
                 lambda g: (2.0 * g * d / n, -2.0 * g * d / n), "mse")


def sum_squares(a, b) -> Tensor:
    """``sum((a - b)**2)`` over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sum_squares: {a.shape} vs {b.shape}")
    d = a.data - b.data
    return _make(np.array((d * d).sum()), (a, b), lambda g: (2.0 * g * d, -2.0 * g * d), "sum_squares")


def straight_through(x, quantized) -> Tensor:
    """Value of ``quantized`` with the gradient passed to ``x`` unchanged."""
    x = as_tensor(x)
    q = np.asarray(quantized.data if isinstance(quantized, Tensor) else quantized, dtype=np.float64)
    if q.shape != x.shape:
        raise ShapeError(f"straight_through: {x.shape} vs {q.shape}")
    return _make(q.copy(), (x,), lambda g: (g,), "straight_through")


def stop_gradient(x) -> Tensor:
    return Tensor(as_tensor(x).data)


# -- recurrent ---------------------------------------------------------------

def lstm(x, w_x, w_h, bias, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over ``x`` of shape (B, T, D); gates ordered i, f, g, o.

    Returns the hidden states (B, T, H). Backpropagation through time is
    done in one fused backward closure.
    """
    x, w_x, w_h, bias = (as_tensor(t) for t in (x, w_x, w_h, bias))
    if x.ndim != 3 or w_x.shape[0] != x.shape[2] or w_x.shape[1] != w_h.shape[1] \
            or w_h.shape[1] != 4 * w_h.shape[0] or bias.shape != (w_h.shape[1],):
        raise ShapeError(f"lstm: x {x.shape}, w_x {w_x.shape}, w_h {w_h.shape}, b {bias.shape}")
    B, T, _ = x.shape
    H = w_h.shape[0]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    xw = x.data @ w_x.data + bias.data
    hs = np.zeros((B, T, H))
    gates = np.zeros((B, T, 4 * H))
    cs = np.zeros((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in steps:
        a = xw[:, t] + h @ w_h.data
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        gg = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, gg, o], axis=1)
        cs[:, t] = c
        hs[:, t] = h

    def backward(dH):
        da_all = np.zeros_like(gates)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        d_wh = np.zeros_like(w_h.data)
        order = list(steps)
        for k in range(T - 1, -1, -1):
            t = order[k]
            prev = order[k - 1] if k > 0 else None
            h_prev = hs[:, prev] if prev is not None else np.zeros((B, H))
            c_prev = cs[:, prev] if prev is not None else np.zeros((B, H))
            i, f, gg, o = (gates[:, t, j * H:(j + 1) * H] for j in range(4))
            tc = np.tanh(cs[:, t])
            dh = dH[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = np.concatenate([dc * gg * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                                 dc * i * (1.0 - gg * gg), dh * tc * o * (1.0 - o)], axis=1)
            da_all[:, t] = da
            d_wh += h_prev.T @ da
            dh_next = da @ w_h.data.T
            dc_next = dc * f
        flat = da_all.reshape(B * T, 4 * H)
        d_wx = x.data.reshape(B * T, -1).T @ flat
        d_b = flat.sum(axis=0)
        d_x = da_all @ w_x.data.T
        return d_x, d_wx, d_wh, d_b

    return _make(hs, (x, w_x, w_h, bias), backward, "lstm")
