"""Latent diffusion decoder: schedule, v-prediction objective, guidance and DDIM.

Timesteps are 1-based: ``alpha_bar[0] = 1`` is clean data and
``alpha_bar[N] = 0`` is pure noise.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .nn import tensor as T
from .nn.layers import CrossAttention, Dense, LayerNorm, ParamStore, sinusoidal_embedding
from .nn.optim import adam_step
from .nn.tensor import Tensor

COSINE_S = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray   # length N + 1, alpha_bar[0] = 1

    @property
    def N(self) -> int:
        return self.alpha_bar.shape[0] - 1

    @property
    def betas(self) -> np.ndarray:
        """beta_n for n = 1..N."""
        return 1.0 - self.alpha_bar[1:] / self.alpha_bar[:-1]

    def __getitem__(self, n):
        return self.alpha_bar[n]


def build_schedule(N: int = 1000, s: float = COSINE_S) -> NoiseSchedule:
    """Cosine schedule rescaled so the last step has zero signal."""
    if N < 2:
        raise ConfigurationError("schedule needs N >= 2")
    n = np.arange(1, N + 1)
    ab = np.cos((n / N + s) / (1 + s) * np.pi / 2) ** 2
    root = np.sqrt(ab)
    first, last = root[0], root[-1]
    root = (root - last) * first / (first - last)
    ab = root ** 2
    ab[-1] = 0.0
    return NoiseSchedule(np.concatenate([[1.0], ab]))


def _check_step(n, sched: NoiseSchedule):
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n > sched.N):
        raise ConfigurationError(f"timestep out of range [0, {sched.N}]")
    return n


def _coef(n, sched, ndim):
    a = sched.alpha_bar[_check_step(n, sched)]
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


def forward_diffuse(z0, n, eps, sched: NoiseSchedule) -> np.ndarray:
    """``n`` may be a scalar or one step per leading batch index."""
    z0, eps = np.asarray(z0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeError(f"forward_diffuse: z0 {z0.shape} vs eps {eps.shape}")
    a = _coef(n, sched, z0.ndim)
    return np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps


def v_target(z0, eps, n, sched: NoiseSchedule) -> np.ndarray:
    z0, eps = np.asarray(z0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    a = _coef(n, sched, z0.ndim)
    return np.sqrt(a) * eps - np.sqrt(1.0 - a) * z0


def predict_z0(z, v, n, sched) -> np.ndarray:
    a = _coef(n, sched, np.ndim(z))
    return np.sqrt(a) * z - np.sqrt(1.0 - a) * v


def predict_eps(z, v, n, sched) -> np.ndarray:
    a = _coef(n, sched, np.ndim(z))
    return np.sqrt(1.0 - a) * z + np.sqrt(a) * v


# -- latent coder ------------------------------------------------------------

class LatentCoder:
    """Block-wise PCA coder for log-mel windows.

    Each (block_t x block_f) tile of the mel image maps to ``d_z`` numbers, so a
    (frames, mels) window becomes a (frames/block_t, mels/block_f, d_z) latent.
    A linear coder trained for MSE reconstruction has this closed-form
    optimum, so fitting is one eigen-decomposition. One global scale brings
    the latent to unit variance per element.
    """

    def __init__(self, block_t: int = 16, block_f: int = 8, d_z: int = 8):
        if d_z > block_t * block_f:
            raise ConfigurationError("d_z larger than the block size")
        self.block_t, self.block_f, self.d_z = block_t, block_f, d_z
        self.mean = None
        self.basis = None   # (block_t*block_f, d_z), orthonormal columns
        self.scale = 1.0
        self.train_mse = None

    @property
    def fitted(self) -> bool:
        return self.basis is not None

    def _blocks(self, mel) -> np.ndarray:
        mel = np.asarray(mel, dtype=np.float64)
        if mel.ndim == 2:
            mel = mel[None]
        B, Tn, F = mel.shape
        if Tn % self.block_t or F % self.block_f:
            raise ShapeError(f"mel window {Tn}x{F} not divisible into "
                             f"{self.block_t}x{self.block_f} blocks")
        tb, fb = Tn // self.block_t, F // self.block_f
        x = mel.reshape(B, tb, self.block_t, fb, self.block_f).transpose(0, 1, 3, 2, 4)
        return x.reshape(B, tb, fb, self.block_t * self.block_f)

    def _unblocks(self, x) -> np.ndarray:
        B, tb, fb, _ = x.shape
        x = x.reshape(B, tb, fb, self.block_t, self.block_f).transpose(0, 1, 3, 2, 4)
        return x.reshape(B, tb * self.block_t, fb * self.block_f)

    def fit(self, mels) -> "LatentCoder":
        x = self._blocks(mels).reshape(-1, self.block_t * self.block_f)
        self.mean = x.mean(axis=0)
        xc = x - self.mean
        cov = xc.T @ xc / x.shape[0]
        w, v = np.linalg.eigh(cov)
        order = np.argsort(w)[::-1][:self.d_z]
        basis = v[:, order]
        # fix the sign so fitting is reproducible across LAPACK builds
        basis *= np.where(basis[np.abs(basis).argmax(axis=0), np.arange(self.d_z)] < 0, -1.0, 1.0)
        self.basis = basis
        proj = xc @ basis
        self.scale = float(np.sqrt(np.mean(proj ** 2))) or 1.0
        self.train_mse = self.reconstruction_mse(mels)
        return self

    def encode(self, mel) -> np.ndarray:
        """(T, F) or (B, T, F) mel -> (B, T/bt, F/bf, d_z) latent."""
        if not self.fitted:
            raise ConfigurationError("latent coder is not fitted")
        return ((self._blocks(mel) - self.mean) @ self.basis) / self.scale

    def decode(self, z) -> np.ndarray:
        if not self.fitted:
            raise ConfigurationError("latent coder is not fitted")
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 3:
            z = z[None]
        if z.shape[-1] != self.d_z:
            raise ShapeError(f"latent last dim {z.shape[-1]}, expected {self.d_z}")
        return self._unblocks(z * self.scale @ self.basis.T + self.mean)

    def reconstruction_mse(self, mels) -> float:
        mels = np.asarray(mels, dtype=np.float64)
        rec = self.decode(self.encode(mels)).reshape(mels.shape)
        return float(np.mean((rec - mels) ** 2))

    def latent_shape(self, frames: int, mels: int) -> tuple:
        return (frames // self.block_t, mels // self.block_f, self.d_z)

    def state(self) -> dict:
        return {"block": np.array([self.block_t, self.block_f, self.d_z], dtype=np.int64),
                "mean": self.mean, "basis": self.basis,
                "scale": np.array([self.scale]), "train_mse": np.array([self.train_mse])}

    @classmethod
    def from_state(cls, st: dict) -> "LatentCoder":
        bt, bf, dz = (int(v) for v in st["block"])
        c = cls(bt, bf, dz)
        c.mean, c.basis = st["mean"].copy(), st["basis"].copy()
        c.scale, c.train_mse = float(st["scale"][0]), float(st["train_mse"][0])
        return c

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.state().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        return h.hexdigest()


# -- denoiser ----------------------------------------------------------------

@dataclass(frozen=True)
class CFGConfig:
    scale: float = 3.0
    p_drop: float = 0.1
    literal: bool = False   # (1 - w) v_cond + w v_uncond, as the formula is printed

    def __post_init__(self):
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigurationError("p_drop must lie in [0, 1)")


def guided_velocity(v_cond, v_uncond, w: float, literal: bool = False) -> np.ndarray:
    """``v_u + w (v_c - v_u)``, evaluated as ``w v_c + (1 - w) v_u`` so that
    w = 1 and w = 0 return one branch exactly."""
    if literal:
        return (1.0 - w) * v_cond + w * v_uncond
    return w * v_cond + (1.0 - w) * v_uncond


class Denoiser:
    """Token-wise network over latent time rows with cross-attention to the condition.

    The latent (B, tb, fb, d_z) is treated as ``tb`` tokens of width fb*d_z.
    When ``latent_tokens`` and ``cond_rows`` are given, the condition rows that
    share a token's time span are also projected straight into that token.
    """

    def __init__(self, store: ParamStore, latent_width: int, cond_dim: int, hidden: int = 128,
                 blocks: int = 2, heads: int = 4, seed: int = 0, name: str = "denoiser",
                 latent_tokens: int | None = None, cond_rows: int | None = None):
        rng = np.random.default_rng(seed)
        self.latent_width, self.cond_dim, self.hidden = latent_width, cond_dim, hidden
        self.latent_tokens = latent_tokens
        self.inp = Dense(store, f"{name}.in", latent_width, hidden, rng=rng)
        # time-aligned path: the condition rows covering one latent token, concatenated
        self.local = None
        if latent_tokens and cond_rows:
            if cond_rows % latent_tokens:
                raise ConfigurationError("condition rows must divide evenly over latent tokens")
            self.rows_per_token = cond_rows // latent_tokens
            self.local = Dense(store, f"{name}.local", self.rows_per_token * cond_dim, hidden, rng=rng)
        self.t1 = Dense(store, f"{name}.t1", hidden, hidden, "silu", rng=rng)
        self.t2 = Dense(store, f"{name}.t2", hidden, hidden, rng=rng)
        self.blocks = []
        for i in range(blocks):
            p = f"{name}.b{i}"
            self.blocks.append((
                LayerNorm(store, f"{p}.ln1", hidden),
                CrossAttention(store, f"{p}.att", hidden, cond_dim, heads, rng=rng),
                LayerNorm(store, f"{p}.ln2", hidden),
                Dense(store, f"{p}.ff1", hidden, 2 * hidden, "silu", rng=rng),
                Dense(store, f"{p}.ff2", 2 * hidden, hidden, rng=rng),
            ))
        self.ln_out = LayerNorm(store, f"{name}.ln_out", hidden)
        self.out = Dense(store, f"{name}.out", hidden, latent_width, rng=rng)
        self.null = store.add(f"{name}.null", 0.02 * rng.normal(size=cond_dim))

    def condition(self, E, keep=None) -> Tensor:
        """Add positional embeddings; rows with ``keep == 0`` use the null embedding."""
        E = T.as_tensor(E)
        if E.ndim != 3 or E.shape[-1] != self.cond_dim:
            raise ShapeError(f"condition {E.shape}, expected (B, rows, {self.cond_dim})")
        B, L, _ = E.shape
        if keep is not None:
            m = np.asarray(keep, dtype=np.float64).reshape(B, 1, 1)
            if np.all(m == 0.0):
                E = T.mul(self.null, np.ones((B, L, 1)))
            elif not np.all(m == 1.0):
                E = T.add(T.mul(E, m), T.mul(self.null, 1.0 - m))
        return T.add(E, sinusoidal_embedding(np.arange(L), self.cond_dim))

    def __call__(self, z, n, E, keep=None) -> Tensor:
        z = T.as_tensor(z)
        B, tb, _ = z.shape
        if z.shape[-1] != self.latent_width:
            raise ShapeError(f"denoiser input {z.shape}, expected width {self.latent_width}")
        n = np.broadcast_to(np.asarray(n, dtype=np.float64), (B,))
        temb = self.t2(self.t1(sinusoidal_embedding(n, self.hidden))).reshape(B, 1, self.hidden)
        pos = sinusoidal_embedding(np.arange(tb), self.hidden)
        h = T.add(T.add(self.inp(z), pos), temb)
        ctx = self.condition(E, keep)
        if self.local is not None:
            if ctx.shape[1] != tb * self.rows_per_token:
                raise ShapeError(f"condition has {ctx.shape[1]} rows, expected {tb * self.rows_per_token}")
            h = h + self.local(ctx.reshape(B, tb, self.rows_per_token * self.cond_dim))
        for ln1, att, ln2, ff1, ff2 in self.blocks:
            h = h + att(ln1(h), ctx)
            h = h + ff2(ff1(ln2(T.add(h, temb))))
        return self.out(self.ln_out(h))


def diffusion_loss(denoiser: Denoiser, z0, E, sched: NoiseSchedule, rng=None, n=None, eps=None,
                   keep=None, p_drop: float = 0.0) -> Tensor:
    """Mean squared v-prediction error. ``n``, ``eps`` and ``keep`` are drawn from
    ``rng`` unless given (fixed values give a deterministic validation loss)."""
    z0 = np.asarray(z0, dtype=np.float64)
    B = z0.shape[0]
    if n is None:
        n = rng.integers(1, sched.N + 1, size=B)
    if eps is None:
        eps = rng.normal(size=z0.shape)
    if keep is None:
        keep = (rng.random(B) >= p_drop).astype(np.float64) if p_drop > 0 else np.ones(B)
    zn = forward_diffuse(z0, n, eps, sched)
    v = v_target(z0, eps, n, sched)
    return T.mse(denoiser(zn, n, E, keep), v)


def train_step(store: ParamStore, denoiser: Denoiser, z0, E, sched: NoiseSchedule, rng,
               lr: float = 1e-3, cfg: CFGConfig = CFGConfig(), warmup_steps: int = 0) -> float:
    """One standalone denoiser update (the codec loop adds the commitment term itself)."""
    store.zero_grad()
    loss = diffusion_loss(denoiser, z0, E, sched, rng, p_drop=cfg.p_drop)
    loss.backward()
    adam_step(store, lr, warmup_steps=warmup_steps)
    return float(loss.data)


def ddim_timesteps(N: int, steps: int) -> np.ndarray:
    """Evenly spaced descending steps starting at N, followed by 0."""
    if steps < 1:
        raise ConfigurationError("sampler needs at least one step")
    if steps > N:
        raise ConfigurationError(f"sampler steps {steps} exceed schedule length {N}")
    ts = np.round(N - np.arange(steps) * N / steps).astype(np.int64)
    return np.concatenate([ts, [0]])


def ddim_sample(sched: NoiseSchedule, steps: int, E, w: float, seed: int, model,
                literal: bool = False, shape=None) -> np.ndarray:
    """Deterministic DDIM sampling with guidance.

    ``model`` is a :class:`Denoiser` or any callable ``(z, n, E, keep) -> v``.
    ``shape`` defaults to (B, tb, latent_width) with tb taken from ``model``'s
    ``latent_tokens`` attribute if present.
    """
    ts = ddim_timesteps(sched.N, steps)
    E = np.asarray(E.data if isinstance(E, Tensor) else E, dtype=np.float64)
    B = E.shape[0]
    if shape is None:
        if not hasattr(model, "latent_tokens"):
            raise ConfigurationError("ddim_sample needs the latent shape")
        shape = (B, model.latent_tokens, model.latent_width)
    z = np.random.default_rng(seed).normal(size=shape)

    def velocity(z, n, keep):
        with T.no_grad():
            out = model(z, np.full(z.shape[0], n), np.concatenate([E] * (len(keep) // B)), keep)
        return out.data if isinstance(out, Tensor) else np.asarray(out)

    for n, n_prev in zip(ts[:-1], ts[1:]):
        if w == 1.0 and not literal:
            v = velocity(z, n, np.ones(B))
        elif w == 0.0 and not literal:
            v = velocity(z, n, np.zeros(B))
        else:
            both = velocity(np.concatenate([z, z]), n, np.concatenate([np.ones(B), np.zeros(B)]))
            v = guided_velocity(both[:B], both[B:], w, literal)
        z0_hat = predict_z0(z, v, n, sched)
        eps_hat = predict_eps(z, v, n, sched)
        a_prev = sched.alpha_bar[n_prev]
        z = np.sqrt(a_prev) * z0_hat + np.sqrt(1.0 - a_prev) * eps_hat
    return z
