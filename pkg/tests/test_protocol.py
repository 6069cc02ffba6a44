import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsl.errors import (
    BadMagicError,
    EncodingError,
    MalformedMessageError,
    ProtocolError,
    TruncatedMessageError,
    UnsupportedVersionError,
)
from stsl.protocol import (
    MessageType,
    SmashedMessage,
    decode_message,
    encode_message,
    encoded_size,
    read_frame,
    write_frame,
)


def activation(rng, dims=(1, 16, 16, 16), client=7, batch=3):
    payload = rng.standard_normal(dims).astype(np.float32)
    labels = rng.integers(0, 10, dims[0])
    return SmashedMessage(MessageType.ACTIVATION, client, batch, 1234, payload, labels)


def random_message(rng):
    ndim = int(rng.integers(1, 5))
    dims = tuple(int(d) for d in rng.integers(1, 5, ndim))
    payload = rng.standard_normal(dims).astype(np.float32)
    # sprinkle special values to check bit-exactness
    flat = payload.reshape(-1)
    flat[rng.integers(0, flat.size)] = rng.choice([np.nan, -0.0, np.inf, 1e-42])
    kind = MessageType.ACTIVATION if rng.random() < 0.5 else MessageType.GRADIENT
    labels = rng.integers(0, 10, dims[0]) if kind is MessageType.ACTIVATION else None
    return SmashedMessage(
        kind,
        int(rng.integers(0, 2**32)),
        int(rng.integers(0, 2**63)) * 2 + int(rng.integers(0, 2)),
        int(rng.integers(0, 2**63)),
        payload,
        labels,
    )


def test_activation_length_arithmetic(rng):
    # 28 fixed header + 4 dims*4 + 4 label count + 1 label*4 + 4096 floats*4
    data = encode_message(activation(rng))
    assert len(data) == 4 + 2 + 1 + 4 + 8 + 8 + 1 + 4 * 4 + 4 + 4 * 1 + 4 * 4096 == 16_436
    assert encoded_size(activation(rng)) == 16_436


def test_zero_gradient_payload_bytes():
    msg = SmashedMessage(MessageType.GRADIENT, 1, 2, 3, np.zeros(1, np.float32))
    data = encode_message(msg)
    assert data[-4:] == b"\x00\x00\x00\x00"
    assert len(data) == 28 + 4 + 4 + 4


def test_round_trip_fields(rng):
    msg = activation(rng)
    out = decode_message(encode_message(msg))
    assert out == msg
    assert out.payload.dtype == np.float32 and out.payload.shape == (1, 16, 16, 16)
    assert out.labels == msg.labels


def test_round_trip_fuzz_1000():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        msg = random_message(rng)
        data = encode_message(msg)
        assert decode_message(data) == msg
        assert encode_message(decode_message(data)) == data


def test_encoding_is_canonical(rng):
    a = activation(np.random.default_rng(5))
    b = activation(np.random.default_rng(5))
    assert encode_message(a) == encode_message(b)


def test_bad_magic():
    with pytest.raises(BadMagicError, match="not a STSL stream"):
        decode_message(b"XXXX" + bytes(60))
    with pytest.raises(BadMagicError):
        decode_message(b"X")


def test_version_mismatch(rng):
    data = bytearray(encode_message(activation(rng)))
    struct.pack_into("<H", data, 4, 2)
    with pytest.raises(UnsupportedVersionError):
        decode_message(bytes(data))


def test_truncated_by_one_byte(rng):
    data = encode_message(activation(rng))
    with pytest.raises(TruncatedMessageError) as err:
        decode_message(data[:-1])
    assert err.value.expected == len(data) and err.value.actual == len(data) - 1


def test_gradient_with_labels_is_malformed():
    data = bytearray(encode_message(SmashedMessage(MessageType.GRADIENT, 0, 0, 0, np.zeros((1, 2), np.float32))))
    # patch label count to 1 and append one label before the payload
    label_count_at = 28 + 2 * 4
    struct.pack_into("<I", data, label_count_at, 1)
    data[label_count_at + 4:label_count_at + 4] = struct.pack("<I", 3)
    with pytest.raises(MalformedMessageError):
        decode_message(bytes(data))


def test_trailing_bytes_rejected(rng):
    with pytest.raises(MalformedMessageError):
        decode_message(encode_message(activation(rng)) + b"\x00")


def test_encode_rejects_bad_fields(rng):
    msg = activation(rng)
    msg.client_id = 2**32
    with pytest.raises(EncodingError):
        encode_message(msg)
    with pytest.raises(EncodingError):
        SmashedMessage(MessageType.ACTIVATION, 0, 0, 0, np.zeros((2, 3), np.float32), [1])
    with pytest.raises(EncodingError):
        SmashedMessage(MessageType.GRADIENT, 0, 0, 0, np.zeros((2, 3), np.float32), [1, 2])


def test_random_bytes_never_crash():
    rng = np.random.default_rng(7)
    valid = encode_message(activation(rng, dims=(2, 3)))
    for i in range(10_000):
        if i % 2:
            blob = rng.integers(0, 256, rng.integers(0, 80)).astype(np.uint8).tobytes()
        else:  # mutate a valid message so deeper branches are reached
            blob = bytearray(valid[: rng.integers(0, len(valid) + 1)])
            for _ in range(rng.integers(0, 4)):
                if blob:
                    blob[rng.integers(0, len(blob))] = rng.integers(0, 256)
            blob = bytes(blob)
        try:
            decode_message(blob)
        except ProtocolError:
            pass


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=200))
def test_decoder_total_on_arbitrary_bytes(blob):
    try:
        msg = decode_message(blob)
    except ProtocolError:
        return
    assert encode_message(msg) == blob


def test_stream_framing(rng):
    msgs = [activation(rng, batch=i) for i in range(3)]
    msgs.append(SmashedMessage(MessageType.GRADIENT, 7, 9, 10, np.ones((2, 2), np.float32)))
    buf = io.BytesIO()
    for m in msgs:
        write_frame(buf, m)
    buf.seek(0)
    out = []
    while (m := read_frame(buf)) is not None:
        out.append(m)
    assert out == msgs
    truncated = io.BytesIO(buf.getvalue()[:-3])
    with pytest.raises(TruncatedMessageError):
        while read_frame(truncated) is not None:
            pass
