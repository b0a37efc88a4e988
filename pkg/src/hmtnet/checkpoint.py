"""Flat binary checkpoint archive.

Layout (all integers little-endian unsigned 32-bit)::

    magic   b"HMTCKPT\\0"
    version
    meta_len, meta (UTF-8 JSON, e.g. the network config)
    count
    count x [name_len, name (UTF-8), ndim, dims..., payload (<f4, row-major)]

Entries are written sorted by name, so identical parameters and metadata
always produce identical files regardless of dict order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParseError

MAGIC = b"HMTCKPT\0"
VERSION = 1


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in sorted(arrays.items()):
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, meta)``; arrays come back as float32."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ParseError(f"{path}: not an hmtnet checkpoint")
    pos = 8

    def u32():
        nonlocal pos
        (value,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        return value

    version = u32()
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    n = u32()
    meta = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    arrays: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        n = u32()
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos += 4 * count
    if pos != len(buf):
        raise ParseError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, meta
