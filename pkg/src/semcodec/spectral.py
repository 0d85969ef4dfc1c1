"""Log-mel analysis, patch geometry and Griffin-Lim resynthesis.

The default geometry (1024-point FFT, 160-sample hop at 16 kHz, 128 mel
bins, 16x16 patches) gives 100 frames per second, so a 10.24 s window maps
to 1024 frames and 512 patches.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import SAMPLE_RATE, Waveform
from .errors import ConfigurationError, EmptyInputError, ShapeError


@dataclass(frozen=True)
class SpectralConfig:
    n_fft: int = 1024
    hop: int = 160
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    patch_size: int = 16
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.n_mels % self.patch_size:
            raise ConfigurationError("n_mels must be divisible by patch_size")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigurationError("need 0 <= fmin < fmax <= Nyquist")

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop

    def frames_for(self, n_samples: int) -> int:
        return n_samples // self.hop


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (T, F) natural-log amplitude
    config: SpectralConfig = field(default_factory=SpectralConfig)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class PatchGrid:
    patches: np.ndarray  # (L, P, P), time-patch major
    t_patches: int
    f_patches: int

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    def flat(self) -> np.ndarray:
        """Patches as (L, P*P) row vectors."""
        return self.patches.reshape(self.count, -1)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered STFT with zero padding; returns (1 + len(x)//hop, n_fft//2 + 1)."""
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    xp = np.pad(x, (pad, pad + n_fft))
    n_frames = 1 + len(x) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * hann(n_fft), axis=-1)


def istft(spec: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    win = hann(n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=-1) * win
    n_frames = spec.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        out[i * hop:i * hop + n_fft] += frames[i]
        norm[i * hop:i * hop + n_fft] += win ** 2
    out /= np.maximum(norm, 1e-8)
    pad = n_fft // 2
    res = out[pad:pad + length]
    if res.shape[0] < length:
        res = np.pad(res, (0, length - res.shape[0]))
    return res


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, n_mels: int, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, unit peak, shape (n_mels, n_fft//2+1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def _filterbank(cfg: SpectralConfig) -> np.ndarray:
    return mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)


def waveform_to_logmel(w, cfg: SpectralConfig | None = None) -> MelSpectrogram:
    cfg = cfg or SpectralConfig()
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("cannot analyze an empty waveform")
    n_frames = cfg.frames_for(x.size)
    if n_frames == 0:
        raise EmptyInputError(f"waveform shorter than one hop ({cfg.hop} samples)")
    mag = np.abs(stft(x, cfg.n_fft, cfg.hop))[:n_frames]
    mel = mag @ _filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


def patchify(mel, patch_size: int | None = None) -> PatchGrid:
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    P = patch_size or (mel.config.patch_size if isinstance(mel, MelSpectrogram) else 16)
    T, F = values.shape
    if T % P or F % P:
        raise ShapeError(f"mel shape {T}x{F} not divisible by patch size {P}")
    tp, fp = T // P, F // P
    patches = values.reshape(tp, P, fp, P).transpose(0, 2, 1, 3).reshape(tp * fp, P, P)
    return PatchGrid(patches.copy(), tp, fp)


def unpatchify(grid: PatchGrid, config: SpectralConfig | None = None) -> MelSpectrogram:
    P = grid.patches.shape[-1]
    v = grid.patches.reshape(grid.t_patches, grid.f_patches, P, P).transpose(0, 2, 1, 3)
    return MelSpectrogram(v.reshape(grid.t_patches * P, grid.f_patches * P).copy(),
                          config or SpectralConfig())


def mel_to_linear(mel_amp: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Approximate inverse of the mel projection: transpose, then normalize.

    Each mel value is first divided by its filter's total weight and then
    spread back over the linear bins, so a flat spectrum maps to itself.
    """
    fb = _filterbank(cfg)
    per_band = mel_amp / np.maximum(fb.sum(axis=1), 1e-12)
    coverage = fb.sum(axis=0)
    lin = per_band @ fb / np.maximum(coverage, 1e-12)
    lin[:, coverage <= 0] = 0.0
    return np.maximum(lin, 0.0)


def griffin_lim(mel, iters: int = 32, seed: int = 0, cfg: SpectralConfig | None = None,
                momentum: float = 0.99) -> Waveform:
    """Resynthesize audio from a log-mel spectrogram.

    Uses the accelerated Griffin-Lim update; ``momentum=0`` gives the
    classic algorithm. Output length is ``T * hop`` samples.
    """
    if iters < 1:
        raise ConfigurationError("griffin_lim needs iters >= 1")
    if isinstance(mel, MelSpectrogram):
        cfg = cfg or mel.config
        values = mel.values
    else:
        values = np.asarray(mel)
    cfg = cfg or SpectralConfig()
    T = values.shape[0]
    length = T * cfg.hop
    mag = mel_to_linear(np.exp(values), cfg)
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(mag.shape))
    prev = np.zeros_like(angles)
    for _ in range(iters):
        x = istft(mag * angles, cfg.n_fft, cfg.hop, length)
        rebuilt = stft(x, cfg.n_fft, cfg.hop)[:T]
        accel = rebuilt - (momentum / (1 + momentum)) * prev
        prev = rebuilt
        angles = accel / np.maximum(np.abs(accel), 1e-16)
    x = istft(mag * angles, cfg.n_fft, cfg.hop, length)
    return Waveform(x)
