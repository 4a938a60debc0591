"""Versioned binary checkpoints of named float arrays.

Layout (little-endian)::

    b"QDCK" | u16 version | u32 meta_len | meta (UTF-8 JSON) | u32 count
    then per array: u16 name_len | name | u8 ndim | ndim * u64 shape | float64 data
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"QDCK"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(meta_bytes)) + meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key)
            fh.write(struct.pack(f"<B{arr.ndim}Q", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic at offset 0)")
    version, meta_len = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    meta = json.loads(raw[pos:pos + meta_len].decode())
    pos += meta_len
    count, = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    try:
        for _ in range(count):
            n, = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            ndim, = struct.unpack_from("<B", raw, pos)
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos + 1)
            pos += 1 + 8 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(raw):
                raise FormatError(f"{path}: array {name!r} truncated at offset {len(raw)}")
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated at offset {pos}") from exc
    return arrays, meta
