"""Binary checkpoint container.

Layout (little-endian)::

    b"KIRA" | u32 version | u32 n_sections
    per section: u16 name_len | name (utf-8) | u8 dtype | u8 ndim | u64 * ndim shape | raw data

dtype codes: 0 float32, 1 float64, 2 int64, 3 uint8.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"KIRA"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2, np.dtype("u1"): 3}
_DTYPES = {v: k for k, v in _CODES.items()}


class CheckpointError(ValueError):
    pass


def _canon(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == np.bool_:
        a = a.astype(np.uint8)
    elif a.dtype.kind == "f" and a.dtype.itemsize == 4:
        a = a.astype("<f4")
    elif a.dtype.kind == "f":
        a = a.astype("<f8")
    elif a.dtype.kind in "iu" and a.dtype != np.uint8:
        a = a.astype("<i8")
    return np.ascontiguousarray(a)


def encode(sections: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name in sorted(sections):
        a = _canon(sections[name])
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", _CODES[a.dtype], a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    off = 12
    out = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + ln].decode("utf-8")
        off += ln
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        dt = _DTYPES[code]
        size = int(np.prod(shape)) * dt.itemsize
        out[name] = np.frombuffer(blob[off:off + size], dtype=dt).reshape(shape).copy()
        off += size
    return out


def save(path, sections: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(encode(sections))
    os.replace(tmp, path)


def load(path) -> dict:
    with open(path, "rb") as f:
        return decode(f.read())


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def unpack_json(arr) -> object:
    return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8"))
