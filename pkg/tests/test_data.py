import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsl.data import (
    RECORD_BYTES,
    Dataset,
    PartitionPlan,
    encode_cifar10,
    load_cifar10,
    make_synthetic,
    parse_cifar10,
    partition_dataset,
    write_cifar10,
)
from stsl.errors import ConfigError, FormatError


def rule_classifier(images):
    """Oracle: brightest (quadrant, channel) mean, independent of the generator code."""
    preds = []
    for img in images:
        scores = []
        for q in range(4):
            y0, x0 = 16 * (q // 2), 16 * (q % 2)
            for ch in range(3):
                scores.append(img[ch, y0:y0 + 16, x0:x0 + 16].mean())
        preds.append(int(np.argmax(scores)))
    return np.array(preds)


def record(label, fill):
    return bytes([label]) + bytes([fill]) * 3072


def test_single_white_record(tmp_path):
    path = tmp_path / "one.bin"
    path.write_bytes(record(3, 255))
    ds = load_cifar10([path])
    assert len(ds) == 1 and ds.labels[0] == 3
    assert ds.images.shape == (1, 3, 32, 32)
    assert np.all(ds.images == 1.0)


def test_plane_order():
    raw = bytearray(record(0, 0))
    raw[1] = 255  # first red pixel
    raw[1 + 1024 + 33] = 51  # green (1, 1)
    raw[1 + 2048 + 1023] = 102  # blue (31, 31)
    img = parse_cifar10(bytes(raw)).images[0]
    assert img[0, 0, 0] == 1.0
    assert img[1, 1, 1] == pytest.approx(0.2)
    assert img[2, 31, 31] == pytest.approx(0.4)


def test_truncated_file_reports_offset():
    data = record(1, 10) * 3 + b"\x00"
    with pytest.raises(FormatError) as err:
        parse_cifar10(data)
    assert err.value.offset == 3 * RECORD_BYTES


def test_bad_label():
    with pytest.raises(FormatError) as err:
        parse_cifar10(record(1, 0) + record(10, 0))
    assert err.value.offset == RECORD_BYTES


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=3 * RECORD_BYTES + 5))
def test_parser_total(blob):
    try:
        ds = parse_cifar10(blob)
    except FormatError:
        return
    assert len(ds) * RECORD_BYTES == len(blob)


def test_write_round_trip(tmp_path):
    ds = make_synthetic(20, 0)
    path = tmp_path / "batch.bin"
    write_cifar10(path, ds)
    assert path.stat().st_size == 20 * RECORD_BYTES
    back = load_cifar10([path, path])
    assert len(back) == 40
    np.testing.assert_array_equal(back.labels[:20], ds.labels)
    np.testing.assert_allclose(back.images[:20], ds.images, atol=0.5 / 255 + 1e-7)
    assert encode_cifar10(back.head(20)) == path.read_bytes()


def test_iid_sizes_and_determinism():
    ds = make_synthetic(10, 0)
    plan = PartitionPlan("iid", n_clients=3, seed=4)
    shards = partition_dataset(ds, plan)
    assert sorted(len(s) for s in shards) == [3, 3, 4]
    again = partition_dataset(ds, plan)
    assert all(a.images.tobytes() == b.images.tobytes() for a, b in zip(shards, again))


def test_label_skew_two_classes_each():
    ds = make_synthetic(500, 1)  # balanced: 50 per class
    shards = partition_dataset(ds, PartitionPlan("label_skew", n_clients=5, seed=2, classes_per_client=2))
    for shard in shards:
        assert len(np.unique(shard.labels)) == 2


def test_partition_errors():
    ds = make_synthetic(4, 0)
    with pytest.raises(ConfigError):
        PartitionPlan("label_skew", n_clients=2, classes_per_client=11)
    with pytest.raises(ConfigError):
        partition_dataset(ds, PartitionPlan("iid", n_clients=5))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(10, 80),
    clients=st.integers(1, 6),
    seed=st.integers(0, 10**6),
    skew=st.one_of(st.none(), st.integers(1, 10)),
)
def test_partition_disjoint_and_covering(n, clients, seed, skew):
    ds = make_synthetic(n, seed)
    ds = Dataset(ds.images, ds.labels)
    # tag each sample with its index so shards can be traced back
    ds.images[:, 0, 0, 0] = np.arange(n, dtype=np.float32)
    plan = (
        PartitionPlan("iid", clients, seed)
        if skew is None
        else PartitionPlan("label_skew", clients, seed, classes_per_client=skew)
    )
    shards = partition_dataset(ds, plan)
    assert len(shards) == clients
    ids = np.concatenate([s.images[:, 0, 0, 0] for s in shards]).astype(int)
    assert sorted(ids.tolist()) == list(range(n))


def test_synthetic_determinism_and_range():
    a, b = make_synthetic(100, 3), make_synthetic(100, 3)
    assert a.images.tobytes() == b.images.tobytes() and np.array_equal(a.labels, b.labels)
    assert len(a) == 100 and a.labels.min() >= 0 and a.labels.max() <= 9
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert np.bincount(a.labels, minlength=10).tolist() == [10] * 10


def test_synthetic_rule_oracle_is_perfect():
    ds = make_synthetic(1000, 11)
    assert (rule_classifier(ds.images) == ds.labels).mean() == 1.0
