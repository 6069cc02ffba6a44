"""Binary wire format for cut-layer activations and gradients.

Layout (all little-endian)::

    magic      4s   b"STSL"
    version    u16  1
    msg_type   u8   1 = ACTIVATION, 2 = GRADIENT
    client_id  u32
    batch_id   u64
    timestamp  u64  simulated microseconds
    ndim       u8
    dims       u32 * ndim
    n_labels   u32  = dims[0] for ACTIVATION, 0 for GRADIENT
    labels     u32 * n_labels
    payload    f32 * prod(dims), row-major

For files and sockets each message is framed by a u64 byte length.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO

import numpy as np

from .errors import (
    BadMagicError,
    EncodingError,
    MalformedMessageError,
    TruncatedMessageError,
    UnsupportedVersionError,
)

MAGIC = b"STSL"
VERSION = 1
_FIXED = struct.Struct("<4sHBIQQB")
_U32 = struct.Struct("<I")
_FRAME = struct.Struct("<Q")
U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class MessageType(IntEnum):
    ACTIVATION = 1
    GRADIENT = 2


@dataclass(eq=False)
class SmashedMessage:
    msg_type: MessageType
    client_id: int
    batch_id: int
    sim_timestamp_us: int
    payload: np.ndarray
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        self.msg_type = MessageType(self.msg_type)
        self.payload = np.ascontiguousarray(self.payload, dtype=np.float32)
        if self.payload.ndim == 0:
            raise EncodingError("payload must have at least one dim")
        if self.labels is not None:
            self.labels = tuple(int(v) for v in self.labels)
        if self.msg_type is MessageType.ACTIVATION:
            if self.labels is None or len(self.labels) != self.payload.shape[0]:
                raise EncodingError(
                    f"ACTIVATION needs one label per batch row ({self.payload.shape[0]}), "
                    f"got {None if self.labels is None else len(self.labels)}"
                )
        elif self.labels:
            raise EncodingError("GRADIENT messages carry no labels")
        else:
            self.labels = None

    def __eq__(self, other):
        if not isinstance(other, SmashedMessage):
            return NotImplemented
        return (
            self.msg_type == other.msg_type
            and self.client_id == other.client_id
            and self.batch_id == other.batch_id
            and self.sim_timestamp_us == other.sim_timestamp_us
            and self.labels == other.labels
            and self.payload.shape == other.payload.shape
            and self.payload.tobytes() == other.payload.tobytes()
        )

    def __repr__(self):
        return (
            f"SmashedMessage({self.msg_type.name}, client={self.client_id}, "
            f"batch={self.batch_id}, t={self.sim_timestamp_us}us, dims={list(self.payload.shape)})"
        )


def encoded_size(msg: SmashedMessage) -> int:
    n_labels = len(msg.labels or ())
    return _FIXED.size + 4 * msg.payload.ndim + 4 + 4 * n_labels + 4 * msg.payload.size


def encode_message(msg: SmashedMessage) -> bytes:
    for name, value, limit in (
        ("client_id", msg.client_id, U32_MAX),
        ("batch_id", msg.batch_id, U64_MAX),
        ("sim_timestamp_us", msg.sim_timestamp_us, U64_MAX),
    ):
        if not 0 <= value <= limit:
            raise EncodingError(f"{name}={value} does not fit its field")
    dims = msg.payload.shape
    if len(dims) > 255:
        raise EncodingError(f"too many dims ({len(dims)})")
    if any(d > U32_MAX for d in dims):
        raise EncodingError(f"dims {list(dims)} overflow 32 bits")
    labels = msg.labels or ()
    if any(not 0 <= v <= U32_MAX for v in labels):
        raise EncodingError("labels must fit in u32")
    parts = [
        _FIXED.pack(MAGIC, VERSION, int(msg.msg_type), msg.client_id, msg.batch_id,
                    msg.sim_timestamp_us, len(dims)),
        struct.pack(f"<{len(dims)}I", *dims),
        _U32.pack(len(labels)),
        struct.pack(f"<{len(labels)}I", *labels),
        msg.payload.astype("<f4", copy=False).tobytes(),
    ]
    return b"".join(parts)


def decode_message(data: bytes) -> SmashedMessage:
    """Exact inverse of :func:`encode_message`; rejects anything else with a ProtocolError."""
    data = memoryview(data).cast("B")
    size = len(data)
    head = bytes(data[:4])
    if head != MAGIC[:len(head)]:
        raise BadMagicError("not a STSL stream")
    if size < _FIXED.size:
        raise TruncatedMessageError(_FIXED.size, size)
    _, version, msg_type, client_id, batch_id, ts, ndim = _FIXED.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported STSL version {version} (expected {VERSION})")
    if msg_type not in (MessageType.ACTIVATION, MessageType.GRADIENT):
        raise MalformedMessageError(f"unknown message type {msg_type}")
    if ndim == 0:
        raise MalformedMessageError("payload must have at least one dim")
    offset = _FIXED.size
    header_end = offset + 4 * ndim + 4
    if size < header_end:
        raise TruncatedMessageError(header_end, size)
    dims = struct.unpack_from(f"<{ndim}I", data, offset)
    (n_labels,) = _U32.unpack_from(data, offset + 4 * ndim)
    if 0 in dims:
        raise MalformedMessageError(f"zero-sized dim in {list(dims)}")
    if msg_type == MessageType.GRADIENT and n_labels:
        raise MalformedMessageError("GRADIENT message carries labels")
    if msg_type == MessageType.ACTIVATION and n_labels != dims[0]:
        raise MalformedMessageError(f"ACTIVATION has {n_labels} labels for {dims[0]} rows")
    count = math.prod(dims)
    total = header_end + 4 * n_labels + 4 * count
    if size < total:
        raise TruncatedMessageError(total, size)
    if size > total:
        raise MalformedMessageError(f"{size - total} trailing bytes after a {total}-byte message")
    labels = struct.unpack_from(f"<{n_labels}I", data, header_end) if n_labels else None
    payload = np.frombuffer(data, dtype="<f4", count=count, offset=header_end + 4 * n_labels)
    return SmashedMessage(
        MessageType(msg_type),
        client_id,
        batch_id,
        ts,
        payload.astype(np.float32).reshape(dims),
        labels,
    )


def write_frame(stream: BinaryIO, msg: SmashedMessage) -> int:
    body = encode_message(msg)
    stream.write(_FRAME.pack(len(body)))
    stream.write(body)
    return _FRAME.size + len(body)


def read_frame(stream: BinaryIO) -> SmashedMessage | None:
    """Read one length-prefixed message; ``None`` at a clean end of stream."""
    head = stream.read(_FRAME.size)
    if not head:
        return None
    if len(head) < _FRAME.size:
        raise TruncatedMessageError(_FRAME.size, len(head))
    (length,) = _FRAME.unpack(head)
    body = stream.read(length)
    if len(body) < length:
        raise TruncatedMessageError(length, len(body))
    return decode_message(body)
