"""Two-layer tokenizer: frozen k-means semantic layer plus a learned EMA acoustic layer.

The acoustic layer quantizes the output of a BiLSTM that sees both the
stacked features and their semantic quantization. It does not quantize the
residual ``Y - E_s``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import CodebookFamily, EnsembleCodebook, nearest_centroid
from .errors import ConfigurationError, ShapeError
from .features import StackedFeatures
from .nn import tensor as T
from .nn.layers import BiLSTM, Dense, ParamStore
from .nn.tensor import Tensor


def _rows(Y) -> np.ndarray:
    if isinstance(Y, StackedFeatures):
        Y = Y.vectors
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ShapeError(f"expected a (rows, dim) matrix, got shape {Y.shape}")
    return Y


def _centroids(cb) -> np.ndarray:
    return cb.centroids if isinstance(cb, EnsembleCodebook) else np.asarray(cb, dtype=np.float64)


@dataclass
class SemanticQuantization:
    tokens: np.ndarray
    features: np.ndarray
    codebook_size: int


def semantic_quantize(Y, cb) -> SemanticQuantization:
    """Nearest centroid per row; ties go to the lowest index."""
    Y, C = _rows(Y), _centroids(cb)
    if Y.shape[1] != C.shape[1]:
        raise ShapeError(f"semantic_quantize: features dim {Y.shape[1]}, codebook dim {C.shape[1]}")
    idx, _ = nearest_centroid(Y, C)
    return SemanticQuantization(idx, C[idx].copy(), C.shape[0])


class AcousticEncoder:
    """BiLSTM over [Y, E_s] followed by a linear map back to the stacked dimension."""

    def __init__(self, store: ParamStore, dim: int, hidden: int | None = None, seed: int = 0,
                 init: str = "uniform", name: str = "acoustic"):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.rnn = BiLSTM(store, f"{name}.rnn", 2 * dim, hidden, rng, init=init)
        self.out = Dense(store, f"{name}.out", 2 * self.rnn.hidden, dim, rng=rng,
                         init="zeros" if init == "zeros" else "glorot")

    def __call__(self, Y, E_s) -> Tensor:
        """(B, T, D) and (B, T, D) -> (B, T, D); 2-D inputs are treated as one sequence."""
        Y, E_s = T.as_tensor(Y), T.as_tensor(E_s)
        if Y.shape != E_s.shape or Y.shape[-1] != self.dim:
            raise ShapeError(f"acoustic_encode: Y {Y.shape}, E_s {E_s.shape}, dim {self.dim}")
        squeeze = Y.ndim == 2
        if squeeze:
            Y, E_s = Y.reshape(1, *Y.shape), E_s.reshape(1, *E_s.shape)
        out = self.out(self.rnn(T.concat([Y, E_s], axis=-1)))
        return out.reshape(out.shape[1:]) if squeeze else out


def acoustic_encode(Y, E_s, encoder: AcousticEncoder) -> np.ndarray:
    with T.no_grad():
        return encoder(_rows(Y), _rows(E_s)).data


class AcousticVQ:
    """EMA-updated codebook. ``ema_sum`` starts at ``eps * codebook`` so the
    initial centroids are exactly the seeded rows."""

    def __init__(self, size: int, dim: int, decay: float = 0.99, eps: float = 1e-5,
                 codebook: np.ndarray | None = None, seed: int = 0):
        if size < 1 or dim < 1:
            raise ConfigurationError("acoustic codebook needs size >= 1 and dim >= 1")
        if not 0.0 <= decay <= 1.0:
            raise ConfigurationError("EMA decay must lie in [0, 1]")
        self.decay, self.eps = decay, eps
        if codebook is None:
            codebook = np.random.default_rng(seed).normal(size=(size, dim))
        self.reset(codebook)

    def reset(self, codebook: np.ndarray) -> None:
        codebook = np.array(codebook, dtype=np.float64)
        self.codebook = codebook
        self.ema_size = np.zeros(codebook.shape[0])
        self.ema_sum = self.eps * codebook

    def init_from_data(self, rows: np.ndarray, seed: int = 0) -> None:
        """Seed centroids with distinct data rows (repeated with jitter if there are too few)."""
        rows = _rows(rows)
        rng = np.random.default_rng(seed)
        n = self.size
        pick = rng.permutation(rows.shape[0])[:n]
        cb = rows[pick]
        if cb.shape[0] < n:
            extra = rows[rng.integers(0, rows.shape[0], n - cb.shape[0])]
            extra = extra + 1e-3 * rows.std() * rng.normal(size=extra.shape)
            cb = np.concatenate([cb, extra])
        self.reset(cb)

    @property
    def size(self) -> int:
        return self.codebook.shape[0]

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]

    def quantize(self, Y_A):
        return acoustic_quantize(Y_A, self)

    def update(self, Y_A, assignments, decay: float | None = None) -> None:
        ema_update(self, Y_A, assignments, decay)


def acoustic_quantize(Y_A, vq: AcousticVQ):
    """Returns ``(c_a, E_a)``. Callers that need gradients wrap ``E_a`` with
    :func:`semcodec.nn.tensor.straight_through`."""
    Y_A = _rows(Y_A)
    if Y_A.shape[1] != vq.dim:
        raise ShapeError(f"acoustic_quantize: dim {Y_A.shape[1]}, codebook dim {vq.dim}")
    idx, _ = nearest_centroid(Y_A, vq.codebook)
    return idx, vq.codebook[idx].copy()


def commitment_loss(Y_A, E_a) -> float:
    """Sum of squared row distances."""
    d = np.asarray(Y_A, dtype=np.float64) - np.asarray(E_a, dtype=np.float64)
    if d.ndim == 0:
        raise ShapeError("commitment_loss needs arrays")
    return float(np.sum(d * d))


def ema_update(vq: AcousticVQ, Y_A, assignments, decay: float | None = None) -> None:
    Y_A = _rows(Y_A)
    a = np.asarray(assignments, dtype=np.int64).reshape(-1)
    if a.shape[0] != Y_A.shape[0]:
        raise ShapeError("ema_update: one assignment per row required")
    g = vq.decay if decay is None else decay
    counts = np.bincount(a, minlength=vq.size).astype(np.float64)
    sums = np.zeros_like(vq.codebook)
    np.add.at(sums, a, Y_A)
    vq.ema_size = g * vq.ema_size + (1.0 - g) * counts
    vq.ema_sum = g * vq.ema_sum + (1.0 - g) * sums
    vq.codebook = vq.ema_sum / (vq.ema_size + vq.eps)[:, None]


def usage_fraction(tokens, size: int) -> float:
    """Fraction of codebook entries that occur in ``tokens``."""
    return float(np.unique(np.asarray(tokens)).size / size)


@dataclass
class EncoderOutput:
    tokens: np.ndarray        # [c_s, c_a], blockwise
    features: np.ndarray      # rows [E_s | E_a]
    semantic: SemanticQuantization
    acoustic_tokens: np.ndarray

    @property
    def semantic_tokens(self) -> np.ndarray:
        return self.semantic.tokens

    @property
    def pairs(self) -> int:
        return self.acoustic_tokens.shape[0]


def encode(Y, family: CodebookFamily | EnsembleCodebook, codebook_choice: int | None,
           encoder: AcousticEncoder, vq: AcousticVQ, semantic_vq: AcousticVQ | None = None
           ) -> EncoderOutput:
    """Semantic then acoustic quantization of one stacked feature sequence.

    ``semantic_vq`` replaces the k-means layer with a learned EMA codebook
    (ablation only).
    """
    Y = _rows(Y)
    if semantic_vq is not None:
        c_s, E_s = acoustic_quantize(Y, semantic_vq)
        sq = SemanticQuantization(c_s, E_s, semantic_vq.size)
    else:
        cb = family.get(codebook_choice) if isinstance(family, CodebookFamily) else family
        sq = semantic_quantize(Y, cb)
    Y_A = acoustic_encode(Y, sq.features, encoder)
    c_a, E_a = acoustic_quantize(Y_A, vq)
    return EncoderOutput(np.concatenate([sq.tokens, c_a]),
                         np.concatenate([sq.features, E_a], axis=1), sq, c_a)
