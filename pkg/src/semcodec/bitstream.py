"""Self-describing token packets with fixed-width bit packing.

Layout (all multi-byte header fields little-endian)::

    offset  size  field
    0       4     magic "SMC1"
    4       2     version (u16)
    6       4     sample_rate (u32)
    10      1     stack factor K (u8)
    11      4     semantic vocab N_s (u32)
    15      4     acoustic vocab N_a (u32)
    19      4     token_pairs (u32)
    23      8     original_sample_count (u64)
    31      2     window config id (u16)
    33      ...   payload: pairs (s0, a0, s1, a1, ...) at ceil(log2 N) bits
                  each, MSB first, zero-padded to a byte boundary
    end-4   4     CRC-32 (IEEE) of everything before it
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import CorruptionError, EncodeError, FormatError, UnsupportedError

MAGIC = b"SMC1"
VERSION = 1
HEADER = struct.Struct("<4sHIBIIIQH")

# patches per paper-geometry window and its length; fixes every rate below
PATCHES_PER_WINDOW = 512
WINDOW_SECONDS = Fraction(1024, 100)

WINDOW_CONFIGS = {0: 10.24, 1: 2.56}


def bits_for(n: int) -> int:
    """``ceil(log2 n)``; a vocabulary of one still costs zero bits."""
    return max(0, (int(n) - 1).bit_length())


@dataclass(frozen=True)
class PacketHeader:
    stack_factor: int
    semantic_vocab: int
    acoustic_vocab: int
    token_pairs: int
    original_sample_count: int
    window_config: int = 0
    sample_rate: int = 16000
    version: int = VERSION

    def __post_init__(self):
        for name in ("semantic_vocab", "acoustic_vocab"):
            n = getattr(self, name)
            if n < 1 or n & (n - 1):
                raise EncodeError(f"{name}={n} must be a power of two")
        if self.stack_factor < 1:
            raise EncodeError("stack factor must be >= 1")

    @property
    def bits_per_pair(self) -> int:
        return bits_for(self.semantic_vocab) + bits_for(self.acoustic_vocab)

    @property
    def payload_bits(self) -> int:
        return self.token_pairs * self.bits_per_pair

    def to_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.sample_rate, self.stack_factor,
                           self.semantic_vocab, self.acoustic_vocab, self.token_pairs,
                           self.original_sample_count, self.window_config)


@dataclass(frozen=True)
class CodecPacket:
    header: PacketHeader
    payload: bytes
    crc32: int

    def to_bytes(self) -> bytes:
        return self.header.to_bytes() + self.payload + struct.pack("<I", self.crc32)


def _pack_fields(values: np.ndarray, widths: np.ndarray) -> bytes:
    """Concatenate ``values[i]`` as ``widths[i]``-bit MSB-first fields."""
    total = int(widths.sum())
    bits = np.zeros(total + (-total) % 8, dtype=np.uint8)
    pos = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)
    for w in np.unique(widths):
        if w == 0:
            continue
        sel = widths == w
        shifts = np.arange(w - 1, -1, -1, dtype=np.uint64)
        field_bits = (values[sel, None].astype(np.uint64) >> shifts) & np.uint64(1)
        bits[pos[sel, None] + np.arange(w)] = field_bits
    return np.packbits(bits).tobytes()


def _unpack_fields(payload: bytes, widths: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8)).astype(np.uint64)
    pos = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)
    out = np.zeros(widths.shape[0], dtype=np.uint64)
    for w in np.unique(widths):
        if w == 0:
            continue
        sel = widths == w
        weights = np.uint64(1) << np.arange(w - 1, -1, -1, dtype=np.uint64)
        out[sel] = (bits[pos[sel, None] + np.arange(w)] * weights).sum(axis=1)
    return out.astype(np.int64)


def pack(c_s, c_a, header: PacketHeader) -> CodecPacket:
    c_s = np.asarray(c_s, dtype=np.int64).reshape(-1)
    c_a = np.asarray(c_a, dtype=np.int64).reshape(-1)
    if c_s.shape != c_a.shape or c_s.shape[0] != header.token_pairs:
        raise EncodeError(f"expected {header.token_pairs} token pairs, got {c_s.shape[0]}/{c_a.shape[0]}")
    if c_s.size and (c_s.min() < 0 or c_s.max() >= header.semantic_vocab):
        raise EncodeError("semantic token out of range")
    if c_a.size and (c_a.min() < 0 or c_a.max() >= header.acoustic_vocab):
        raise EncodeError("acoustic token out of range")
    values = np.empty(2 * c_s.size, dtype=np.int64)
    values[0::2], values[1::2] = c_s, c_a
    widths = np.tile([bits_for(header.semantic_vocab), bits_for(header.acoustic_vocab)], c_s.size)
    payload = _pack_fields(values, widths) if values.size else b""
    return CodecPacket(header, payload, zlib.crc32(header.to_bytes() + payload))


def unpack(data: bytes):
    """Parse a packet; returns ``(header, c_s, c_a)``."""
    if len(data) < HEADER.size + 4:
        raise FormatError(f"packet of {len(data)} bytes is shorter than header + CRC")
    magic, version, rate, K, n_s, n_a, pairs, n_samples, win = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedError(f"packet version {version}, this build reads {VERSION}")
    try:
        header = PacketHeader(K, n_s, n_a, pairs, n_samples, win, rate, version)
    except EncodeError as exc:
        raise FormatError(str(exc)) from exc
    n_payload = (header.payload_bits + 7) // 8
    expected = HEADER.size + n_payload + 4
    if len(data) != expected:
        raise FormatError(f"packet length {len(data)}, header implies {expected}")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if crc != zlib.crc32(data[:expected - 4]):
        raise CorruptionError("packet CRC mismatch")
    widths = np.tile([bits_for(n_s), bits_for(n_a)], pairs)
    values = _unpack_fields(data[HEADER.size:HEADER.size + n_payload], widths) if pairs else np.zeros(0, np.int64)
    return header, values[0::2].copy(), values[1::2].copy()


def pairs_per_second(stack_factor: int) -> Fraction:
    """Exact token pairs per second: ``(512 / K) / 10.24``."""
    return Fraction(PATCHES_PER_WINDOW, stack_factor) / WINDOW_SECONDS


def bitrate_report(header: PacketHeader) -> dict:
    """Rates computed in exact rational arithmetic, rounded once to float."""
    pps = pairs_per_second(header.stack_factor)
    sem = pps * bits_for(header.semantic_vocab) / 1000
    aco = pps * bits_for(header.acoustic_vocab) / 1000
    return {"kbps_semantic": float(sem), "kbps_acoustic": float(aco),
            "kbps_total": float(sem + aco), "tokens_per_second": float(2 * pps)}


def _kbps(x: float) -> str:
    """At least three decimals, more only when the value needs them."""
    whole, frac = f"{x:.6f}".split(".")
    frac = frac.rstrip("0").ljust(3, "0")
    return f"{whole}.{frac}"


def format_report(header: PacketHeader) -> str:
    r = bitrate_report(header)
    lines = [f"{k}={getattr(header, k)}" for k in
             ("version", "sample_rate", "stack_factor", "semantic_vocab", "acoustic_vocab",
              "token_pairs", "original_sample_count", "window_config")]
    lines.append(f"duration_s={header.original_sample_count / header.sample_rate:.3f}")
    lines += [f"kbps_semantic={_kbps(r['kbps_semantic'])}",
              f"kbps_acoustic={_kbps(r['kbps_acoustic'])}",
              f"kbps_total={_kbps(r['kbps_total'])}",
              f"tokens_per_second={r['tokens_per_second']:g}"]
    return "\n".join(lines)


def expected_payload_bytes(header: PacketHeader) -> int:
    return math.ceil(header.payload_bits / 8)
