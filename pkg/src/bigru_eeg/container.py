"""Portable named-array container used for datasets and checkpoints.

Byte layout (all integers little-endian)::

    magic       8 bytes   b"BGRUARR\\x00"
    version     u16       FORMAT_VERSION
    count       u32       number of arrays
    then, per array:
      name_len  u16
      name      name_len bytes, UTF-8
      dtype     u8        1=float32 2=float64 3=int64 4=uint8
      rank      u8
      dims      rank x u64
      payload   prod(dims) * itemsize bytes, row-major, little-endian

Nothing follows the last payload. Structured metadata travels as a uint8
array holding UTF-8 JSON (see :func:`encode_json`).
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError, FormatVersionMismatch, ShapeCorruption

MAGIC = b"BGRUARR\x00"
FORMAT_VERSION = 1

_TAGS = {1: "<f4", 2: "<f8", 3: "<i8", 4: "u1"}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3, np.dtype("uint8"): 4}


def encode_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def decode_json(arr: np.ndarray):
    return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8"))


def dumps(arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        code = _CODES.get(arr.dtype.newbyteorder("=")) or _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_TAGS[code]).tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict:
    mv = memoryview(buf)
    if len(buf) < len(MAGIC) + 6 or bytes(mv[: len(MAGIC)]) != MAGIC:
        raise CheckpointError("not a bigru_eeg array container (bad magic)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<HI", buf, pos)
    pos += 6
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"container version {version}, expected {FORMAT_VERSION}")

    def need(n, what):
        if pos + n > len(buf):
            raise ShapeCorruption(f"truncated container while reading {what}")

    out = {}
    for _ in range(count):
        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 2, "name")
        name = bytes(mv[pos : pos + nlen]).decode("utf-8")
        pos += nlen
        code, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if code not in _TAGS:
            raise ShapeCorruption(f"{name}: unknown dtype tag {code}")
        need(8 * rank, f"{name} dims")
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        dt = np.dtype(_TAGS[code])
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise ShapeCorruption(
                f"{name}: declared shape {dims} needs {nbytes} bytes, only {len(buf) - pos} left"
            )
        arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(buf):
        raise ShapeCorruption(f"{len(buf) - pos} trailing bytes after last array")
    return out


def write_arrays(path, arrays: dict):
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(dumps(arrays))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_arrays(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
