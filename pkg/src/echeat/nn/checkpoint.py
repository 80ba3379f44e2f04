"""Versioned binary container for network weights.

Layout, all little-endian::

    b"ECHK"  u16 version  u16 len + arch tag  u32 len + JSON build config
    u32 tensor count
    per tensor: u16 len + kind tag, u8 ndim, u32 dims..., float32 data
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"ECHK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _put_str(out: list, s: str, fmt: str) -> None:
    raw = s.encode("utf-8")
    out.append(struct.pack(fmt, len(raw)))
    out.append(raw)


def dumps(arch: str, config: dict, tensors: Sequence[tuple[str, np.ndarray]]) -> bytes:
    out: list[bytes] = [MAGIC, struct.pack("<H", VERSION)]
    _put_str(out, arch, "<H")
    _put_str(out, json.dumps(config, sort_keys=True), "<I")
    out.append(struct.pack("<I", len(tensors)))
    for tag, arr in tensors:
        _put_str(out, tag, "<H")
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str) -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


def loads(data: bytes) -> tuple[str, dict, list[tuple[str, np.ndarray]]]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = r.string("<H")
    config = json.loads(r.string("<I"))
    (count,) = r.unpack("<I")
    tensors = []
    for _ in range(count):
        tag = r.string("<H")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
        tensors.append((tag, arr))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return arch, config, tensors


def save(fh: BinaryIO, arch: str, config: dict, tensors) -> None:
    fh.write(dumps(arch, config, tensors))


def load(fh: BinaryIO):
    return loads(fh.read())
