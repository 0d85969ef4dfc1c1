"""Parameter store and the small set of layers the codec needs."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ConfigurationError, ShapeError
from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Named trainable parameters plus their Adam moments."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.adam_m: dict = {}
        self.adam_v: dict = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad(self, name) -> np.ndarray:
        p = self.params[name]
        return np.zeros_like(p.data) if p.grad is None else p.grad

    def n_parameters(self, prefix: str = "") -> int:
        return sum(p.data.size for n, p in self.params.items() if n.startswith(prefix))

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.params.items())


def _glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, (n_in, n_out))


ACTIVATIONS = {None: lambda x: x, "linear": lambda x: x, "tanh": T.tanh,
               "sigmoid": T.sigmoid, "silu": T.silu}


class Dense:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 activation: str | None = None, rng=None, init: str = "glorot"):
        if n_in < 1 or n_out < 1:
            raise ConfigurationError("dense dims must be positive")
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        if init == "zeros":
            w = np.zeros((n_in, n_out))
        elif init == "identity":
            w = np.eye(n_in, n_out)
        else:
            w = _glorot(rng, n_in, n_out)
        self.n_in, self.n_out = n_in, n_out
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(n_out))
        self.act = ACTIVATIONS[activation]

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"dense: input dim {x.shape[-1]}, expected {self.n_in}")
        return self.act(x @ self.w + self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim))
        self.beta = store.add(f"{name}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class BiLSTM:
    """Forward and backward LSTMs over (B, T, D); outputs are concatenated to 2H.

    ``hidden`` defaults to twice the input size.
    """

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int | None = None,
                 rng=None, init: str = "uniform"):
        hidden = hidden or 2 * n_in
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        scale = 0.0 if init == "zeros" else 1.0 / np.sqrt(hidden)
        self.dirs = []
        for d in ("fwd", "bwd"):
            b = np.zeros(4 * hidden)
            if init != "zeros":
                b[hidden:2 * hidden] = 1.0  # forget-gate bias
            self.dirs.append((
                store.add(f"{name}.{d}.wx", rng.uniform(-scale, scale, (n_in, 4 * hidden))),
                store.add(f"{name}.{d}.wh", rng.uniform(-scale, scale, (hidden, 4 * hidden))),
                store.add(f"{name}.{d}.b", b),
            ))

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ShapeError(f"bilstm: input {x.shape}, expected (B, T, {self.n_in})")
        fwd = T.lstm(x, *self.dirs[0], reverse=False)
        bwd = T.lstm(x, *self.dirs[1], reverse=True)
        return T.concat([fwd, bwd], axis=-1)


class CrossAttention:
    """Multi-head attention from queries (B, Tq, query_dim) to keys/values (B, Tk, kv_dim)."""

    def __init__(self, store: ParamStore, name: str, query_dim: int, kv_dim: int, heads: int,
                 model_dim: int | None = None, rng=None):
        model_dim = model_dim or query_dim
        if model_dim % heads:
            raise ConfigurationError("model_dim must be divisible by heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads, self.model_dim = heads, model_dim
        self.q = Dense(store, f"{name}.q", query_dim, model_dim, rng=rng)
        self.k = Dense(store, f"{name}.k", kv_dim, model_dim, rng=rng)
        self.v = Dense(store, f"{name}.v", kv_dim, model_dim, rng=rng)
        self.o = Dense(store, f"{name}.o", model_dim, query_dim, rng=rng)

    def _split(self, x, n):
        B = x.shape[0]
        return x.reshape(B, n, self.heads, self.model_dim // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x, context) -> Tensor:
        x, context = T.as_tensor(x), T.as_tensor(context)
        if x.ndim != 3 or context.ndim != 3 or x.shape[0] != context.shape[0]:
            raise ShapeError(f"cross_attention: query {x.shape}, context {context.shape}")
        B, Tq, _ = x.shape
        Tk = context.shape[1]
        q = self._split(self.q(x), Tq)
        k = self._split(self.k(context), Tk)
        v = self._split(self.v(context), Tk)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.model_dim // self.heads))
        att = T.softmax(scores, axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(B, Tq, self.model_dim)
        return self.o(out)


def sinusoidal_embedding(positions, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Fixed sin/cos embedding, shape (len(positions), dim)."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    ang = pos * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb
