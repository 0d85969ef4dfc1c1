"""k-means codebooks per audio domain and their 2:1:1 ensembles.

An ensemble concatenates a general-sound codebook with speech and music
codebooks half its size, in the fixed order ``[general, speech, music]``.
A family holds four ensembles at sizes ``S, 2S, 4S, 8S``.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigurationError, CorruptionError, FormatError,
                     InsufficientDataError, ShapeError, UnsupportedError)
from .synthcorpus import Domain

CODEBOOK_MAGIC = b"SMCK"
CODEBOOK_VERSION = 1
ENSEMBLE_ORDER = (Domain.GENERAL, Domain.SPEECH, Domain.MUSIC)
DOMAIN_TAGS = {Domain.GENERAL: 0, Domain.SPEECH: 1, Domain.MUSIC: 2}


def squared_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Fast ``||x_i - c_j||^2`` via the dot-product expansion (may round)."""
    d = (x * x).sum(1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def nearest_centroid(x: np.ndarray, c: np.ndarray, chunk: int = 4096):
    """Index of the nearest row of ``c`` for every row of ``x``.

    Candidates are screened with the fast expansion, then any row whose
    runner-up lies within rounding distance of the minimum is resolved with
    exact squared differences. Ties go to the lowest index.
    Returns ``(indices, squared_distances)``.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2 or x.shape[1] != c.shape[1]:
        raise ShapeError(f"cannot quantize {x.shape} against codebook {c.shape}")
    idx = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0])
    c_norm = (c * c).sum(1)
    c_max = c_norm.max() if c.shape[0] else 0.0
    for s in range(0, x.shape[0], chunk):
        xs = x[s:s + chunk]
        x_norm = (xs * xs).sum(1)
        d = x_norm[:, None] - 2.0 * (xs @ c.T) + c_norm[None, :]
        best = d.min(axis=1)
        # rounding bound of the expansion, with a wide safety factor
        slack = 1e-10 * (x_norm + c_max) + 1e-300
        near = d <= (best + slack)[:, None]
        ambiguous = near.sum(axis=1) > 1
        i_fast = d.argmin(axis=1)
        exact = ((xs - c[i_fast]) ** 2).sum(1)
        for r in np.flatnonzero(ambiguous):
            cand = np.flatnonzero(near[r])
            dd = ((xs[r][None, :] - c[cand]) ** 2).sum(1)
            j = int(np.argmin(dd))
            i_fast[r] = cand[j]
            exact[r] = dd[j]
        idx[s:s + chunk] = i_fast
        dist[s:s + chunk] = exact
    return idx, dist


@dataclass
class Codebook:
    centroids: np.ndarray
    domain: Domain | None = None
    inertia_history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class EnsembleCodebook:
    centroids: np.ndarray
    provenance: list  # (Domain, offset, count)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def domain_of(self, index: int) -> Domain:
        for domain, offset, count in self.provenance:
            if offset <= index < offset + count:
                return domain
        raise IndexError(f"index {index} outside ensemble of {self.size}")

    def part(self, domain: Domain) -> np.ndarray:
        for d, offset, count in self.provenance:
            if d == domain:
                return self.centroids[offset:offset + count]
        raise KeyError(domain)


@dataclass
class CodebookFamily:
    ensembles: list  # EnsembleCodebook, ascending size
    stack_factor: int
    embed_dim: int

    @property
    def sizes(self) -> list:
        return [e.size for e in self.ensembles]

    def get(self, size: int) -> EnsembleCodebook:
        for e in self.ensembles:
            if e.size == size:
                return e
        raise ConfigurationError(f"no semantic codebook of size {size}; family has {self.sizes}")

    def state_bytes(self) -> bytes:
        return b"".join(e.centroids.tobytes() for e in self.ensembles)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    M = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(M))
    centers[0] = x[first]
    closest = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            pick = int(rng.integers(M))
        else:
            pick = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            pick = min(pick, M - 1)
        centers[j] = x[pick]
        np.minimum(closest, ((x - centers[j]) ** 2).sum(1), out=closest)
    return centers


def _centroid_sums(x: np.ndarray, labels: np.ndarray, k: int):
    """Per-cluster sums with a fixed (sorted-by-label) reduction order."""
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, x.shape[1]))
    present = np.flatnonzero(counts)
    starts = np.searchsorted(sorted_labels, present)
    sums[present] = np.add.reduceat(x[order], starts, axis=0)
    return sums, counts


def kmeans_fit(points, k: int, max_iters: int = 100, tol: float = 1e-4, seed: int = 0,
               domain: Domain | None = None) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded at the point farthest from its assigned
    centroid. Stops when the relative centroid shift drops below ``tol``.
    ``inertia_history[i]`` is the inertia after the i-th assignment step.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("points must be an (M, D) matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("points contain NaN or Inf")
    M = x.shape[0]
    if k < 1 or M < k:
        raise InsufficientDataError(f"need at least k={k} points, got {M}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    history = []
    for _ in range(max_iters):
        labels, dist = nearest_centroid(x, centers)
        history.append(float(dist.sum()))
        sums, counts = _centroid_sums(x, labels, k)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        empty = np.flatnonzero(~nz)
        if empty.size:
            far = ((x - new[labels]) ** 2).sum(1)
            for j in empty:
                p = int(np.argmax(far))
                new[j] = x[p]
                far[p] = -1.0
        shift = np.linalg.norm(new - centers) / max(np.linalg.norm(centers), 1e-12)
        centers = new
        if shift < tol:
            break
    labels, dist = nearest_centroid(x, centers)
    history.append(float(dist.sum()))
    return Codebook(centers, domain, history)


def merge_ensemble(speech: Codebook, music: Codebook, general: Codebook) -> EnsembleCodebook:
    if not (speech.dim == music.dim == general.dim):
        raise ConfigurationError("codebooks have different dimensions")
    if speech.size != music.size or general.size != 2 * speech.size:
        raise ConfigurationError(
            f"need general = 2 x speech = 2 x music, got {general.size}/{speech.size}/{music.size}")
    parts = {Domain.GENERAL: general, Domain.SPEECH: speech, Domain.MUSIC: music}
    provenance, offset = [], 0
    for d in ENSEMBLE_ORDER:
        provenance.append((d, offset, parts[d].size))
        offset += parts[d].size
    return EnsembleCodebook(np.concatenate([parts[d].centroids for d in ENSEMBLE_ORDER]), provenance)


def _fit_seed(seed: int, domain: Domain, k: int) -> int:
    h = hashlib.blake2b(f"{domain.value}:{k}".encode(), digest_size=4).digest()
    return (seed ^ int.from_bytes(h, "little")) & 0xFFFFFFFF


def build_family(features: dict, base_size: int = 64, stack_factor: int = 1, seed: int = 0,
                 max_points: int | None = 20000, max_iters: int = 100,
                 tol: float = 1e-4) -> CodebookFamily:
    """Fit 3 domains x 4 sizes and merge them into ensembles of ``S, 2S, 4S, 8S``.

    ``features`` maps each :class:`Domain` to its stacked feature matrix.
    With ``max_points`` set, each domain is subsampled (seeded) before fitting.
    """
    if base_size % 4:
        raise ConfigurationError("base_size must be divisible by 4")
    missing = [d for d in ENSEMBLE_ORDER if d not in features]
    if missing:
        raise ConfigurationError(f"no features for domains {[d.value for d in missing]}")
    dims = {np.asarray(features[d]).shape[1] for d in ENSEMBLE_ORDER}
    if len(dims) != 1:
        raise ConfigurationError("per-domain features differ in dimension")
    (dim,) = dims
    if dim % stack_factor:
        raise ConfigurationError("feature dim not divisible by stack factor")
    data = {}
    rng = np.random.default_rng(seed)
    for d in ENSEMBLE_ORDER:
        x = np.asarray(features[d], dtype=np.float64)
        if max_points is not None and x.shape[0] > max_points:
            x = x[np.sort(rng.choice(x.shape[0], max_points, replace=False))]
        data[d] = x
    ensembles = []
    for mult in (1, 2, 4, 8):
        total = base_size * mult
        fits = {}
        for d in ENSEMBLE_ORDER:
            k = total // 2 if d == Domain.GENERAL else total // 4
            fits[d] = kmeans_fit(data[d], k, max_iters, tol, _fit_seed(seed, d, k), d)
        ensembles.append(merge_ensemble(fits[Domain.SPEECH], fits[Domain.MUSIC], fits[Domain.GENERAL]))
    return CodebookFamily(ensembles, stack_factor, dim // stack_factor)


# -- SMCK file format --------------------------------------------------------

def family_to_bytes(family: CodebookFamily) -> bytes:
    out = [CODEBOOK_MAGIC, struct.pack("<IIII", CODEBOOK_VERSION, family.stack_factor,
                                       family.embed_dim, len(family.ensembles))]
    for ens in family.ensembles:
        out.append(struct.pack("<I", len(ens.provenance)))
        for domain, offset, count in ens.provenance:
            out.append(struct.pack("<BI", DOMAIN_TAGS[domain], count))
            out.append(np.ascontiguousarray(ens.centroids[offset:offset + count], dtype="<f8").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def family_from_bytes(data: bytes) -> CodebookFamily:
    if len(data) < 24 or data[:4] != CODEBOOK_MAGIC:
        raise FormatError("not an SMCK codebook file")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]):
        raise CorruptionError("codebook file CRC mismatch")
    version, K, E, n_ens = struct.unpack_from("<IIII", data, 4)
    if version != CODEBOOK_VERSION:
        raise UnsupportedError(f"codebook file version {version}")
    tags = {v: k for k, v in DOMAIN_TAGS.items()}
    pos = 20
    dim = K * E
    ensembles = []
    try:
        for _ in range(n_ens):
            (n_sec,) = struct.unpack_from("<I", data, pos)
            pos += 4
            parts, provenance, offset = [], [], 0
            for _ in range(n_sec):
                tag, count = struct.unpack_from("<BI", data, pos)
                pos += 5
                nbytes = 8 * count * dim
                if pos + nbytes > len(data) - 4:
                    raise FormatError("codebook file truncated")
                parts.append(np.frombuffer(data, "<f8", count * dim, pos).reshape(count, dim).copy())
                provenance.append((tags[tag], offset, count))
                offset += count
                pos += nbytes
            ensembles.append(EnsembleCodebook(np.concatenate(parts), provenance))
    except (struct.error, KeyError) as exc:
        raise FormatError(f"malformed codebook file: {exc}") from exc
    if pos != len(data) - 4:
        raise FormatError("trailing bytes in codebook file")
    return CodebookFamily(ensembles, K, E)


def save_family(path, family: CodebookFamily) -> None:
    Path(path).write_bytes(family_to_bytes(family))


def load_family(path) -> CodebookFamily:
    return family_from_bytes(Path(path).read_bytes())
