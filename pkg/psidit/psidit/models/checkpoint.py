# SPDX-License-Identifier: MIT
"""
Portable binary checkpoints.

Layout, all integers little-endian:

    magic       8 bytes  b"PSIDIT01"
    count       u32      number of tensors
    per tensor:
        name_len  u32
        name      name_len bytes, UTF-8
        trainable u8       0 or 1
        rank      u32
        dims      rank x u64
        values    prod(dims) x float32 (IEEE-754)
    crc         u32      CRC-32 of every byte between the magic and the crc

Tensors are written in store order, which is the module registration order.
"""

from pathlib import Path
import struct
import typing as tp
import zlib

import numpy as np
import torch
from torch import nn

from .params import ParamEntry, ParamStore

MAGIC = b"PSIDIT01"


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ParameterMismatchError(CheckpointError):
    """The checkpoint holds tensors of another architecture or of other shapes."""


def encode_checkpoint(params: tp.Union[ParamStore, nn.Module]) -> bytes:
    if isinstance(params, nn.Module):
        params = ParamStore.of(params)
    parts = [struct.pack("<I", len(params))]
    for name, tensor in params.items():
        raw_name = name.encode("utf-8")
        values = tensor.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", 1 if params.is_trainable(name) else 0))
        parts.append(struct.pack("<I", tensor.dim()))
        parts.append(struct.pack(f"<{tensor.dim()}Q", *tensor.shape))
        parts.append(values.tobytes())
    payload = b"".join(parts)
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def save_checkpoint(params: tp.Union[ParamStore, nn.Module], path: tp.Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params))
    return path


class _Reader:
    def __init__(self, data: bytes, start: int, end: int):
        self.data = data
        self.pos = start
        self.end = end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise TruncatedCheckpointError(
                f"checkpoint truncated: need {n} bytes at offset {self.pos}, only {self.end - self.pos} left"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> ParamStore:
    if len(data) < len(MAGIC):
        raise TruncatedCheckpointError(f"checkpoint has {len(data)} bytes, shorter than the magic")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    reader = _Reader(data, len(MAGIC), len(data))
    (count,) = reader.unpack("<I")
    entries: dict[str, ParamEntry] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (flag,) = reader.unpack("<B")
        (rank,) = reader.unpack("<I")
        dims = reader.unpack(f"<{rank}Q") if rank else ()
        numel = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(reader.take(4 * numel), dtype="<f4").astype(np.float32)
        tensor = torch.from_numpy(values.reshape(dims).copy())
        tensor.requires_grad_(bool(flag))
        if name in entries:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        entries[name] = ParamEntry(tensor, "checkpoint")
    payload_end = reader.pos
    (crc,) = reader.unpack("<I")
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the checksum")
    actual = zlib.crc32(data[len(MAGIC):payload_end]) & 0xFFFFFFFF
    if actual != crc:
        raise ChecksumError(f"CRC mismatch: stored {crc:#010x}, computed {actual:#010x}")
    return ParamStore(entries)


def load_checkpoint(path: tp.Union[str, Path]) -> ParamStore:
    return decode_checkpoint(Path(path).read_bytes())
