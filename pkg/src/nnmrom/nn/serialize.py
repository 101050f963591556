"""Flat binary parameter format.

Layout (little endian)::

    b"NNMP" | u16 version | u32 n_arrays
    per array: u16 name_len | name (utf-8) | u8 ndim | ndim * u64 dims
    concatenated row-major float64 values, in table order

A JSON sidecar (``<file>.json``) carries free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFile, VersionMismatch

MAGIC = b"NNMP"
FORMAT_VERSION = 1


def dumps_params(params: dict) -> bytes:
    head = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(params))]
    body = []
    for name, arr in params.items():
        arr = np.array(arr, dtype="<f8", order="C")
        encoded = name.encode("utf-8")
        head.append(struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.append(arr.tobytes(order="C"))
    return b"".join(head + body)


def loads_params(blob: bytes) -> dict:
    try:
        if blob[:4] != MAGIC:
            raise CorruptFile("bad magic bytes")
        version, n = struct.unpack_from("<HI", blob, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"parameter format version {version}, expected {FORMAT_VERSION}")
        pos = 10
        table = []
        for _ in range(n):
            (length,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + length].decode("utf-8")
            pos += length
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            table.append((name, shape))
        out = {}
        for name, shape in table:
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise CorruptFile(f"truncated data for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
        if pos != len(blob):
            raise CorruptFile("trailing bytes after parameter data")
        return out
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptFile(str(exc)) from exc


def save_params(path, params: dict, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps_params(params))
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(metadata or {}, indent=2, sort_keys=True))
    return path


def load_params(path) -> tuple[dict, dict]:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return loads_params(path.read_bytes()), meta
