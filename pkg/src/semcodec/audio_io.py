"""Mono 16-bit PCM WAV reading and writing at 16 kHz."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedError

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate_hz != SAMPLE_RATE:
            raise UnsupportedError(f"sample rate {self.sample_rate_hz} Hz, expected {SAMPLE_RATE}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE PCM-16 mono 16 kHz file; samples are ``int16 / 32768``."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None or pcm is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1 or bits != 16:
        raise UnsupportedError(f"{path}: only PCM-16 is supported (format {tag}, {bits} bits)")
    if channels != 1:
        raise UnsupportedError(f"{path}: {channels} channels, only mono is supported")
    if rate != SAMPLE_RATE:
        raise UnsupportedError(f"{path}: {rate} Hz, only {SAMPLE_RATE} Hz is supported")
    if len(pcm) % 2:
        raise FormatError(f"{path}: odd data chunk length")
    ints = np.frombuffer(pcm, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1], scale by 32768 and round, saturating at 32767.

    Using the same scale as :func:`read_wav` keeps the roundtrip error
    within one quantization step over the whole range.
    """
    x = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples")
    q = np.round(np.clip(x, -1.0, 1.0) * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(path, w: Waveform) -> None:
    pcm = to_pcm16(w.samples).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16,
        b"data", len(pcm),
    )
    Path(path).write_bytes(header + pcm)
