"""Named-tensor binary checkpoints.

Layout (all little-endian):
    magic   4 bytes  "TSTL"
    version u32      1
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8, ndim u8, dims u64 each, payload raw f32

Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .tensor import Tensor

MAGIC = b"TSTL"
VERSION = 1


def save_checkpoint(params: dict[str, Tensor], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name, t in params.items():
            data = np.ascontiguousarray(t.data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def checkpoint_size(params: dict[str, Tensor]) -> int:
    """Exact on-disk size in bytes for the given tensors."""
    total = len(MAGIC) + 8
    for name, t in params.items():
        total += 2 + len(name.encode("utf-8")) + 1 + 8 * t.ndim + 4 * t.size
    return total


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_checkpoint(path) -> dict[str, Tensor]:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<II", r.take(8))
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        name = r.take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", r.take(1))
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        numel = 1
        for s in shape:
            numel *= s
        data = np.frombuffer(r.take(4 * numel), dtype="<f4").reshape(shape)
        params[name] = Tensor(data.astype(np.float32), requires_grad=True)
    if r.pos != len(r.blob):
        raise CheckpointFormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    return params
