"""Per-patch embeddings and stacking of adjacent embeddings.

The extractor fills the role of a frozen pretrained patch encoder. The
built-in surrogate is a seeded random projection followed by ``tanh`` and
per-vector standardization; real embeddings computed elsewhere can be
brought in through the ``SMCF`` tensor file format.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, ShapeError, UnsupportedError
from .spectral import PatchGrid

TENSOR_MAGIC = b"SMCF"
TENSOR_VERSION = 1

# log-mel values live roughly in [log(1e-5), 5]; center them before projection
INPUT_OFFSET = 6.0
INPUT_SCALE = 4.0


@dataclass
class FeatureSequence:
    vectors: np.ndarray  # (L, E)

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class StackedFeatures:
    vectors: np.ndarray  # (L/K, K*E)
    stack_factor: int


class SurrogateExtractor:
    """Frozen random-projection patch encoder; weights depend only on ``seed``."""

    kind = "surrogate"

    def __init__(self, patch_dim: int = 256, embed_dim: int = 64, seed: int = 0):
        self.patch_dim = patch_dim
        self.embed_dim = embed_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((patch_dim, embed_dim)) / np.sqrt(patch_dim)
        # every input pixel must reach the output: no all-zero rows
        w[np.all(w == 0, axis=1)] = 1.0 / np.sqrt(patch_dim)
        self.weights = w
        self.bias = rng.uniform(-0.5, 0.5, embed_dim)

    def __call__(self, patches) -> FeatureSequence:
        x = patches.flat() if isinstance(patches, PatchGrid) else np.asarray(patches, dtype=np.float64)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.patch_dim:
            raise ShapeError(f"patch vectors have dim {x.shape[1]}, extractor expects {self.patch_dim}")
        h = np.tanh(((x + INPUT_OFFSET) / INPUT_SCALE) @ self.weights + self.bias)
        h = h - h.mean(axis=1, keepdims=True)
        h = h / np.sqrt((h ** 2).mean(axis=1, keepdims=True) + 1e-20)
        return FeatureSequence(h)

    def state_bytes(self) -> bytes:
        return self.weights.tobytes() + self.bias.tobytes()


def surrogate_extract(patches, seed: int = 0, embed_dim: int = 64) -> FeatureSequence:
    grid = patches.flat() if isinstance(patches, PatchGrid) else np.asarray(patches)
    grid = grid.reshape(grid.shape[0], -1)
    return SurrogateExtractor(grid.shape[1], embed_dim, seed)(grid)


def stack(f, K: int) -> StackedFeatures:
    """Concatenate each run of ``K`` consecutive rows: row ``i`` is ``[y_iK, ..., y_(i+1)K-1]``."""
    v = f.vectors if isinstance(f, FeatureSequence) else np.asarray(f)
    if K < 1:
        raise ConfigurationError("stack factor must be >= 1")
    L, E = v.shape
    if L % K:
        raise ShapeError(f"sequence length {L} not divisible by stack factor {K}")
    return StackedFeatures(v.reshape(L // K, K * E).copy(), K)


def unstack(s: StackedFeatures) -> FeatureSequence:
    n, d = s.vectors.shape
    return FeatureSequence(s.vectors.reshape(n * s.stack_factor, d // s.stack_factor).copy())


def export_features(path, f: FeatureSequence) -> None:
    v = np.ascontiguousarray(f.vectors, dtype="<f4")
    body = TENSOR_MAGIC + struct.pack("<III", TENSOR_VERSION, v.shape[0], v.shape[1]) + v.tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def import_features(path, expected_dim: int | None = None) -> FeatureSequence:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not an SMCF tensor file")
    version, L, E = struct.unpack_from("<III", data, 4)
    if version != TENSOR_VERSION:
        raise UnsupportedError(f"{path}: tensor file version {version}")
    n_body = 16 + 4 * L * E
    if len(data) != n_body + 4:
        raise FormatError(f"{path}: expected {n_body + 4} bytes, got {len(data)}")
    (crc,) = struct.unpack_from("<I", data, n_body)
    if crc != zlib.crc32(data[:n_body]):
        raise FormatError(f"{path}: CRC mismatch")
    if expected_dim is not None and E != expected_dim:
        raise ConfigurationError(f"{path}: embedding dim {E}, codec expects {expected_dim}")
    v = np.frombuffer(data, dtype="<f4", count=L * E, offset=16).reshape(L, E)
    return FeatureSequence(v.astype(np.float64))
