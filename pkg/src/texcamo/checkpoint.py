"""Binary checkpoint format for named float64 tensors.

Layout (all integers little-endian)::

    magic    8 bytes   b"TXCKPT\\x00\\x00"
    version  uint32    currently 1
    count    uint32    number of tensors
    then, per tensor, sorted by name:
      name_len uint16, name (utf-8 bytes)
      ndim     uint8,  dims (uint32 each)
      data     prod(dims) float64 values, little-endian, row-major

Sorting by name makes the byte stream a pure function of the parameter values.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"TXCKPT\x00\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: Mapping[str, Tensor | np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = params[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a texcamo checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * size
    if pos != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(blob) - pos})")
    return out


def save_checkpoint(path: str | os.PathLike, params: Mapping[str, Tensor | np.ndarray]) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(params))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
