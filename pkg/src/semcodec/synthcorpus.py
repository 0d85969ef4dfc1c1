"""Deterministic labeled audio corpus in three domains.

Twelve classes, four per domain, each produced by an explicit recipe:

========  ============  =============================================
label     domain        recipe
========  ============  =============================================
0         speech_like   low pulse voice, /a/ formants
1         speech_like   high pulse voice, /i/ formants
2         speech_like   mid pulse voice, /u/ formants
3         speech_like   syllables alternating /a/-/i/ with AM
4         music_like    major triad, sustained
5         music_like    minor triad, tremolo
6         music_like    rising arpeggio, upper register
7         music_like    plucked bass line
8         general       upward log chirps, 250 -> 1200 Hz
9         general       downward log chirps, 4000 -> 1500 Hz
10        general       band-passed noise bursts
11        general       resonant clicks
========  ============  =============================================

Every clip is a pure function of ``(domain, class_label, duration_s, seed)``.
"""
from __future__ import annotations

import enum
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import SAMPLE_RATE, Waveform, read_wav, write_wav
from .errors import ConfigurationError

MASK64 = (1 << 64) - 1


class Domain(str, enum.Enum):
    SPEECH = "speech_like"
    MUSIC = "music_like"
    GENERAL = "general"


CLASS_NAMES = {
    0: "voice-a-low", 1: "voice-i-high", 2: "voice-u-mid", 3: "syllables",
    4: "major-triad", 5: "minor-triad", 6: "arpeggio-up", 7: "bass-line",
    8: "chirp-up", 9: "chirp-down", 10: "noise-bursts", 11: "clicks",
}
CLASS_DOMAIN = {label: (Domain.SPEECH, Domain.MUSIC, Domain.GENERAL)[label // 4]
                for label in CLASS_NAMES}


@dataclass(frozen=True)
class ClipSpec:
    domain: Domain
    class_label: int
    duration_s: float = 2.56
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigurationError("duration_s must be positive")
        if self.class_label not in CLASS_NAMES:
            raise ConfigurationError(f"unknown class_label {self.class_label}")
        if CLASS_DOMAIN[self.class_label] != Domain(self.domain):
            raise ConfigurationError(
                f"class {self.class_label} belongs to {CLASS_DOMAIN[self.class_label].value}")


@dataclass
class LabeledClip:
    samples: np.ndarray
    domain: Domain
    class_label: int
    seed: int

    @property
    def waveform(self) -> Waveform:
        return Waveform(self.samples)


def default_classes(duration_s: float = 2.56) -> list[ClipSpec]:
    return [ClipSpec(CLASS_DOMAIN[c], c, duration_s) for c in sorted(CLASS_NAMES)]


# -- recipes -----------------------------------------------------------------

VOWELS = {
    "a": ((730, 90), (1090, 110), (2440, 160)),
    "i": ((270, 60), (2290, 120), (3010, 180)),
    "u": ((300, 60), (870, 90), (2240, 150)),
}


def _formant_gain(freq, formants, scale=1.0):
    g = np.zeros_like(freq)
    for f, bw in formants:
        g += 1.0 / (1.0 + ((freq - f * scale) / bw) ** 2)
    return g + 1e-3


def _harmonic_voice(t, f0, gains, rng):
    """Additive pulse-train voice.

    ``gains(freqs)`` maps harmonic frequencies, evaluated at the mean f0,
    to amplitudes.
    """
    z = np.exp(1j * 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE)
    n_harm = int(7000 // f0.max())
    k = np.arange(1, n_harm + 1)
    g = gains(k * f0.mean())
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=n_harm))
    out = np.zeros_like(t)
    zk = np.ones_like(z)
    for i in range(n_harm):
        zk = zk * z
        out += g[i] * (phases[i] * zk).imag
    return out


def _voice(t, rng, f0_base, vowel):
    f0 = f0_base * rng.uniform(0.92, 1.08) * (1 + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 6) * t))
    scale = rng.uniform(0.95, 1.05)
    return _harmonic_voice(t, f0, lambda f: _formant_gain(f, VOWELS[vowel], scale), rng)


def _syllables(t, rng):
    f0 = 140 * rng.uniform(0.92, 1.08) * np.ones_like(t)
    rate = rng.uniform(2.2, 2.8)
    mix = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    phase_seed = rng.integers(1 << 32)
    a = _harmonic_voice(t, f0, lambda f: _formant_gain(f, VOWELS["a"]),
                        np.random.default_rng(phase_seed))
    i = _harmonic_voice(t, f0, lambda f: _formant_gain(f, VOWELS["i"]),
                        np.random.default_rng(phase_seed))
    env = 0.55 + 0.45 * np.sin(2 * np.pi * 2 * rate * t) ** 2
    return env * (mix * a + (1 - mix) * i)


def _tone_stack(t, freqs, n_harm=5, decay=0.6):
    out = np.zeros_like(t)
    for f in freqs:
        for k in range(1, n_harm + 1):
            if k * f < 7500:
                out += decay ** (k - 1) * np.sin(2 * np.pi * k * f * t)
    return out


def _triad(t, rng, minor):
    root = rng.uniform(196, 262)
    third = 3 if minor else 4
    freqs = [root, root * 2 ** (third / 12), root * 2 ** (7 / 12)]
    out = _tone_stack(t, freqs)
    if minor:
        out *= 0.7 + 0.3 * np.sin(2 * np.pi * rng.uniform(5, 7) * t)
    return out


def _note_sequence(t, rng, freqs, note_s, n_harm, decay_rate):
    out = np.zeros_like(t)
    n_notes = int(np.ceil(t[-1] / note_s)) + 1 if t.size else 0
    for i in range(n_notes):
        start = i * note_s
        seg = (t >= start) & (t < start + note_s)
        tau = t[seg] - start
        out[seg] = np.exp(-decay_rate * tau) * _tone_stack(tau, [freqs(i)], n_harm=n_harm)
    return out


def _arpeggio(t, rng):
    root = rng.uniform(330, 440)
    steps = (0, 4, 7, 12)
    return _note_sequence(t, rng, lambda i: root * 2 ** (steps[i % 4] / 12),
                          note_s=rng.uniform(0.14, 0.18), n_harm=4, decay_rate=6.0)


def _bass(t, rng):
    notes = rng.uniform(55, 110, size=64)
    return _note_sequence(t, rng, lambda i: notes[i % 64], note_s=rng.uniform(0.28, 0.36),
                          n_harm=8, decay_rate=4.0)


def _chirp(t, rng, f_start, f_end):
    period = rng.uniform(0.45, 0.7)
    f_start *= rng.uniform(0.92, 1.08)
    f_end *= rng.uniform(0.92, 1.08)
    frac = (t % period) / period
    freq = f_start * (f_end / f_start) ** frac
    phase = 2 * np.pi * np.cumsum(freq) / SAMPLE_RATE
    return np.sin(phase) * np.sin(np.pi * frac) ** 0.5


def _bandpass_noise(n, rng, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0
    y = np.fft.irfft(spec, n)
    return y / (np.abs(y).max() + 1e-12)


def _noise_bursts(t, rng):
    n = t.size
    noise = _bandpass_noise(n, rng, rng.uniform(1500, 2500), rng.uniform(5000, 6500))
    env = np.zeros(n)
    pos = 0
    while pos < n:
        pos += int(rng.uniform(0.05, 0.25) * SAMPLE_RATE)
        length = int(rng.uniform(0.05, 0.2) * SAMPLE_RATE)
        env[pos:pos + length] = np.hanning(max(length, 2))[:max(0, min(length, n - pos))]
        pos += length
    return noise * env


def _clicks(t, rng):
    n = t.size
    rate = rng.uniform(8, 15)
    impulses = np.zeros(n)
    times = np.cumsum(rng.exponential(1 / rate, size=int(rate * t[-1] * 3) + 4))
    idx = (times * SAMPLE_RATE).astype(int)
    impulses[idx[idx < n]] = rng.uniform(0.5, 1.0, size=int((idx < n).sum()))
    k = np.arange(int(0.02 * SAMPLE_RATE)) / SAMPLE_RATE
    f_res = rng.uniform(2800, 3400)
    kernel = np.exp(-k * 250) * np.sin(2 * np.pi * f_res * k)
    return np.convolve(impulses, kernel)[:n]


RECIPES = {
    0: lambda t, r: _voice(t, r, 110, "a"),
    1: lambda t, r: _voice(t, r, 220, "i"),
    2: lambda t, r: _voice(t, r, 160, "u"),
    3: _syllables,
    4: lambda t, r: _triad(t, r, minor=False),
    5: lambda t, r: _triad(t, r, minor=True),
    6: _arpeggio,
    7: _bass,
    8: lambda t, r: _chirp(t, r, 250, 1200),
    9: lambda t, r: _chirp(t, r, 4000, 1500),
    10: _noise_bursts,
    11: _clicks,
}


def generate_clip(spec: ClipSpec) -> LabeledClip:
    if spec.class_label not in RECIPES:
        raise ConfigurationError(f"unknown class_label {spec.class_label}")
    n = int(round(spec.duration_s * SAMPLE_RATE))
    rng = np.random.default_rng(spec.seed & MASK64)
    t = np.arange(n) / SAMPLE_RATE
    y = RECIPES[spec.class_label](t, rng) if n else np.zeros(0)
    peak = np.abs(y).max() if n else 0.0
    gain = rng.uniform(0.3, 0.9)
    if peak > 0:
        y = y * (gain / peak)
    y = np.clip(np.nan_to_num(y), -1.0, 1.0)
    return LabeledClip(y, Domain(spec.domain), spec.class_label, spec.seed)


def clip_seed(master_seed: int, class_label: int, index: int) -> int:
    """Per-clip seed: ``master_seed XOR blake2b(class_label, index)`` in 64 bits."""
    h = hashlib.blake2b(f"{class_label}:{index}".encode(), digest_size=8).digest()
    return (master_seed ^ int.from_bytes(h, "little")) & MASK64


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SMC_THREADS", "1")))
    except ValueError:
        return 1


def generate_corpus(n_per_class: int, classes: list[ClipSpec] | None = None,
                    seed: int = 0) -> list[LabeledClip]:
    """Balanced corpus, ordered by template then clip index."""
    classes = default_classes() if classes is None else list(classes)
    if not classes:
        raise ConfigurationError("empty class list")
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1")
    specs = [ClipSpec(c.domain, c.class_label, c.duration_s, clip_seed(seed, c.class_label, i))
             for c in classes for i in range(n_per_class)]
    workers = _threads()
    if workers == 1:
        return [generate_clip(s) for s in specs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(generate_clip, specs))


def write_corpus(clips: list[LabeledClip], out_dir) -> Path:
    """Write one WAV per clip plus ``manifest.tsv`` (path, domain, class_label)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, clip in enumerate(clips):
        name = f"clip{i:05d}_c{clip.class_label:02d}.wav"
        write_wav(out / name, clip.waveform)
        lines.append(f"{name}\t{clip.domain.value}\t{clip.class_label}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_corpus(directory) -> list[LabeledClip]:
    """Load a corpus written by :func:`write_corpus`."""
    d = Path(directory)
    clips = []
    for line in (d / "manifest.tsv").read_text().splitlines():
        if not line.strip():
            continue
        path, domain, label = line.split("\t")
        clips.append(LabeledClip(read_wav(d / path).samples, Domain(domain), int(label), 0))
    return clips
