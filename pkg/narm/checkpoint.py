"""
Binary checkpoint format.

    b"NARM" | u32 version | u32 block count
    per block: u16 name length | name (utf-8) | u32 rows | u32 cols | rows*cols '<f8' row-major
    u32 echo length | config echo (utf-8 JSON, sorted keys)

All integers little-endian. Loading reproduces every block bit for bit.
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .params import NarmParams, NetworkConfig

logger = logging.getLogger(__name__)

MAGIC = b"NARM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(params: NarmParams) -> bytes:
    names = list(params)
    parts = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        block = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<II", *block.shape))
        parts.append(block.tobytes(order="C"))
    echo = json.dumps(params.config.echo(), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(echo)))
    parts.append(echo)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> NarmParams:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("not a NARM checkpoint (bad magic)")
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    weights = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        rows, cols = reader.unpack("<II")
        raw = reader.take(rows * cols * 8)
        weights[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)

    (echo_len,) = reader.unpack("<I")
    try:
        config = NetworkConfig.from_echo(json.loads(reader.take(echo_len).decode("utf-8")))
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"bad config echo: {exc}") from exc
    if reader.offset != len(data):
        raise CheckpointError("trailing bytes after config echo")

    try:
        return NarmParams(config, weights)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def save_checkpoint(params: NarmParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(params))
    logger.debug("wrote checkpoint %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> NarmParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
