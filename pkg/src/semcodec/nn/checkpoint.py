"""``SMCW`` checkpoint container: named arrays and text records with a CRC.

Layout, little-endian::

    "SMCW" | u32 version | u32 n_records
    per record: u16 name_len | name (utf-8) | u8 kind | u8 ndim | u32 dims[ndim] | data
        kind 0: float64 array, kind 1: int64 array, kind 2: utf-8 text (ndim=1, dims=[n_bytes])
    u32 CRC-32 of everything before it

Records are written in insertion order, so saving the same mapping twice
produces identical bytes.
"""
from __future__ import annotations

import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import CorruptionError, FormatError, UnsupportedError

MAGIC = b"SMCW"
VERSION = 1
KIND_F64, KIND_I64, KIND_TEXT = 0, 1, 2


def dumps(records: "OrderedDict[str, object]") -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, value in records.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        if isinstance(value, str):
            data = value.encode("utf-8")
            out.append(struct.pack("<BBI", KIND_TEXT, 1, len(data)) + data)
            continue
        arr = np.asarray(value)
        if np.issubdtype(arr.dtype, np.integer):
            kind, arr = KIND_I64, np.ascontiguousarray(arr, dtype="<i8")
        else:
            kind, arr = KIND_F64, np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<BB", kind, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> "OrderedDict[str, object]":
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not an SMCW checkpoint")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]):
        raise CorruptionError("checkpoint CRC mismatch")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise UnsupportedError(f"checkpoint version {version}, this build reads {VERSION}")
    pos = 12
    end = len(data) - 4
    records = OrderedDict()
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + ln].decode("utf-8")
            pos += 2 + ln
            kind, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if kind == KIND_TEXT:
                records[name] = data[pos:pos + count].decode("utf-8")
                pos += count
            elif kind in (KIND_F64, KIND_I64):
                dtype = "<f8" if kind == KIND_F64 else "<i8"
                if pos + 8 * count > end:
                    raise FormatError(f"record {name!r} truncated")
                records[name] = np.frombuffer(data, dtype, count, pos).reshape(shape).copy()
                pos += 8 * count
            else:
                raise FormatError(f"unknown record kind {kind}")
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    if pos != end:
        raise FormatError("trailing bytes in checkpoint")
    return records


def save(path, records) -> None:
    Path(path).write_bytes(dumps(records))


def load(path) -> "OrderedDict[str, object]":
    return loads(Path(path).read_bytes())
