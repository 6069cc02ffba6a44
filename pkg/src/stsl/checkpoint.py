"""Checkpoint file format.

Layout (little-endian)::

    magic        4s   b"STCK"
    version      u16  1
    config_hash  32s  SHA-256 of the canonical experiment config
    n_tensors    u32
    n_tensors x  { name_len u32, name utf-8, ndim u8, dims u32 * ndim, data f32 * prod(dims) }
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"STCK"
VERSION = 1
_HEAD = struct.Struct("<4sH32sI")
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config_hash: bytes
    tensors: dict[str, np.ndarray]
    version: int = VERSION


def encode_checkpoint(tensors: dict[str, np.ndarray], config_hash: bytes) -> bytes:
    if len(config_hash) != 32:
        raise CheckpointError("config hash must be 32 bytes")
    out = [_HEAD.pack(MAGIC, VERSION, config_hash, len(tensors))]
    for name, t in tensors.items():
        raw = name.encode()
        arr = np.ascontiguousarray(t, dtype="<f4")
        out.append(_U32.pack(len(raw)) + raw + struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_checkpoint(data: bytes) -> Checkpoint:
    view = memoryview(data)
    size = len(view)

    def need(offset: int, n: int, what: str) -> None:
        if offset + n > size:
            raise CheckpointError(f"truncated {what}: need {n} bytes, {size - offset} left", offset)

    need(0, _HEAD.size, "header")
    magic, version, config_hash, count = _HEAD.unpack_from(view, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    pos = _HEAD.size
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(pos, 4, "name length")
        (name_len,) = _U32.unpack_from(view, pos)
        pos += 4
        need(pos, name_len, "tensor name")
        try:
            name = bytes(view[pos:pos + name_len]).decode()
        except UnicodeDecodeError:
            raise CheckpointError("tensor name is not UTF-8", pos) from None
        pos += name_len
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}", pos)
        need(pos, 1, "ndim")
        ndim = view[pos]
        pos += 1
        need(pos, 4 * ndim, "dims")
        dims = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        n_bytes = 4 * math.prod(dims)
        need(pos, n_bytes, f"data of {name!r}")
        arr = np.frombuffer(view, dtype="<f4", count=n_bytes // 4, offset=pos)
        tensors[name] = arr.astype(np.float32).reshape(dims)
        pos += n_bytes
    if pos != size:
        raise CheckpointError(f"{size - pos} trailing bytes", pos)
    return Checkpoint(bytes(config_hash), tensors, version)


def save_checkpoint(path, tensors: dict[str, np.ndarray], config_hash: bytes) -> int:
    data = encode_checkpoint(tensors, config_hash)
    Path(path).write_bytes(data)
    return len(data)


def load_checkpoint(path, expected_hash: bytes | None = None, allow_mismatch: bool = False) -> Checkpoint:
    """Read a checkpoint; a config-hash mismatch is an error unless ``allow_mismatch``."""
    ckpt = decode_checkpoint(Path(path).read_bytes())
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        msg = (f"{path}: checkpoint config hash {ckpt.config_hash.hex()[:12]} does not match "
               f"config {expected_hash.hex()[:12]}")
        if not allow_mismatch:
            raise CheckpointError(msg, 6)
        warnings.warn(msg, stacklevel=2)
    return ckpt
