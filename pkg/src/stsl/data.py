"""CIFAR-10 binary parsing, per-client partitioning and a learnable synthetic set."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ValidationError

IMAGE_DIMS = (3, 32, 32)
PIXELS = 3 * 32 * 32
RECORD_BYTES = 1 + PIXELS  # label byte + R, G, B planes, each row-major 32x32
NUM_CLASSES = 10


@dataclass
class Dataset:
    images: np.ndarray  # [N, 3, 32, 32] float32 in [0, 1]
    labels: np.ndarray  # [N] int64 in [0, 9]

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"{self.images.shape[0] if self.images.ndim else 0} images but "
                f"{self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ValidationError("labels must lie in [0, 9]")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.images[index], self.labels[index])

    def head(self, n: int) -> Dataset:
        return Dataset(self.images[:n], self.labels[:n])


def parse_cifar10(data: bytes, source: str = "<bytes>") -> Dataset:
    """Parse CIFAR-10 binary records; raises :class:`FormatError` on any layout violation."""
    size = len(data)
    if size == 0:
        raise FormatError(f"{source}: no records", offset=0)
    if size % RECORD_BYTES:
        whole = size // RECORD_BYTES * RECORD_BYTES
        raise FormatError(
            f"{source}: length {size} is not a multiple of {RECORD_BYTES}; "
            f"trailing partial record of {size - whole} bytes",
            offset=whole,
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        rec = int(bad[0])
        raise FormatError(f"{source}: record {rec} has label {labels[rec]}", offset=rec * RECORD_BYTES)
    images = raw[:, 1:].reshape(-1, *IMAGE_DIMS).astype(np.float32) / np.float32(255)
    return Dataset(images, labels.astype(np.int64))


def load_cifar10(paths) -> Dataset:
    """Load and concatenate CIFAR-10 batch files in the given order."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    parts = [parse_cifar10(Path(p).read_bytes(), source=str(p)) for p in paths]
    if not parts:
        raise FormatError("no CIFAR-10 files given")
    return Dataset(
        np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts])
    )


def encode_cifar10(ds: Dataset) -> bytes:
    """Serialize to CIFAR-10 records; pixels are rounded to the nearest of 256 levels."""
    pixels = np.rint(np.clip(ds.images, 0, 1) * 255).astype(np.uint8).reshape(len(ds), PIXELS)
    records = np.empty((len(ds), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = ds.labels
    records[:, 1:] = pixels
    return records.tobytes()


def write_cifar10(path, ds: Dataset) -> None:
    Path(path).write_bytes(encode_cifar10(ds))


class PartitionStrategy(Enum):
    IID = "iid"
    LABEL_SKEW = "label_skew"


@dataclass(frozen=True)
class PartitionPlan:
    strategy: PartitionStrategy = PartitionStrategy.IID
    n_clients: int = 1
    seed: int = 0
    classes_per_client: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", PartitionStrategy(self.strategy))
        if self.n_clients < 1:
            raise ConfigError("n_clients", "must be at least 1")
        if self.strategy is PartitionStrategy.LABEL_SKEW:
            cpc = self.classes_per_client
            if cpc is None or not 1 <= cpc <= NUM_CLASSES:
                raise ConfigError("classes_per_client", f"must be in [1, {NUM_CLASSES}], got {cpc}")


def partition_dataset(ds: Dataset, plan: PartitionPlan) -> list[Dataset]:
    """Split ``ds`` into disjoint per-client shards whose union is ``ds``.

    IID: seeded shuffle, then contiguous near-equal pieces (sizes differ by at most 1).
    LABEL_SKEW: classes are dealt to clients from a seeded class permutation,
    ``classes_per_client`` each; a class held by several clients is split
    evenly between them, and classes nobody drew are spread over all clients.
    """
    if plan.n_clients > len(ds):
        raise ConfigError("n_clients", f"{plan.n_clients} clients but only {len(ds)} samples")
    rng = np.random.default_rng(plan.seed)
    if plan.strategy is PartitionStrategy.IID:
        order = rng.permutation(len(ds))
        return [ds.subset(part) for part in np.array_split(order, plan.n_clients)]

    cpc = plan.classes_per_client
    class_order = rng.permutation(NUM_CLASSES)
    owners: dict[int, list[int]] = {c: [] for c in range(NUM_CLASSES)}
    for client in range(plan.n_clients):
        for j in range(cpc):
            owners[int(class_order[(client * cpc + j) % NUM_CLASSES])].append(client)
    shards: list[list[np.ndarray]] = [[] for _ in range(plan.n_clients)]
    for cls in range(NUM_CLASSES):
        members = rng.permutation(np.flatnonzero(ds.labels == cls))
        holders = owners[cls] or list(range(plan.n_clients))
        for client, piece in zip(holders, np.array_split(members, len(holders))):
            shards[client].append(piece)
    return [ds.subset(np.sort(np.concatenate(s))) for s in shards]


# Synthetic classes: (quadrant, channel) pairs in row-major quadrant order
# (top-left, top-right, bottom-left, bottom-right); the first ten are used.
SYNTHETIC_CLASSES = [(q, ch) for q in range(4) for ch in range(3)][:NUM_CLASSES]


def make_synthetic(n: int, seed: int) -> Dataset:
    """Deterministic dataset whose label is readable from the pixels.

    Every pixel is background noise in [0, 0.4) except one 16x16 quadrant of
    one colour channel, which holds values in [0.5, 0.9). The label is the
    index of that (quadrant, channel) pair in :data:`SYNTHETIC_CLASSES`, so
    the brightest quadrant/channel mean always identifies the class.
    Labels are balanced: ``arange(n) % 10`` in shuffled order.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % NUM_CLASSES)
    images = rng.random((n, *IMAGE_DIMS), dtype=np.float32) * np.float32(0.4)
    bright = np.float32(0.5) + rng.random((n, 16, 16), dtype=np.float32) * np.float32(0.4)
    for i, label in enumerate(labels):
        q, ch = SYNTHETIC_CLASSES[label]
        y0, x0 = 16 * (q // 2), 16 * (q % 2)
        images[i, ch, y0:y0 + 16, x0:x0 + 16] = bright[i]
    return Dataset(images, labels)
