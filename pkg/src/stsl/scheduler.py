"""Server-side arrival queue, scheduling policies and the client latency model.

Arrivals are held per client in batch-id order. A client's head becomes
eligible once it has arrived (``arrival_time_us <= now``); later batches of
the same client wait behind it, so per-client order is always preserved.
"""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DuplicateArrivalError, UnknownClientError, ValidationError
from .protocol import SmashedMessage


@dataclass(frozen=True)
class Arrival:
    message: SmashedMessage
    arrival_time_us: int
    send_time_us: int

    def __post_init__(self):
        if self.arrival_time_us < self.send_time_us:
            raise ValidationError(
                f"arrival at {self.arrival_time_us}us precedes send at {self.send_time_us}us"
            )

    @property
    def client_id(self) -> int:
        return self.message.client_id

    @property
    def batch_id(self) -> int:
        return self.message.batch_id


@dataclass(frozen=True)
class Dropped:
    """Arrivals discarded as stale by the last dequeue attempt."""

    arrivals: tuple[Arrival, ...]

    @property
    def count(self) -> int:
        return len(self.arrivals)


class PolicyKind(Enum):
    FIFO = "fifo"
    ROUND_ROBIN = "round_robin"
    STALENESS_BOUND = "staleness_bound"


@dataclass(frozen=True)
class SchedulingPolicy:
    kind: PolicyKind = PolicyKind.FIFO
    max_staleness_us: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.STALENESS_BOUND:
            if self.max_staleness_us is None or self.max_staleness_us < 0:
                raise ValidationError("staleness_bound needs a non-negative max_staleness_us")
        elif self.max_staleness_us is not None:
            raise ValidationError(f"{self.kind.value} takes no max_staleness_us")

    @classmethod
    def fifo(cls) -> SchedulingPolicy:
        return cls(PolicyKind.FIFO)

    @classmethod
    def round_robin(cls) -> SchedulingPolicy:
        return cls(PolicyKind.ROUND_ROBIN)

    @classmethod
    def staleness_bound(cls, max_staleness_us: int) -> SchedulingPolicy:
        return cls(PolicyKind.STALENESS_BOUND, int(max_staleness_us))


class ArrivalQueue:
    def __init__(self):
        self._pending: dict[int, list[Arrival]] = {}
        self._seen: set[tuple[int, int]] = set()
        self._last_served: dict[int, int] = {}
        self._serve_clock = 0
        self.enqueued = 0
        self.dequeued = 0
        self.dropped = 0
        self.processed_by_client: Counter[int] = Counter()
        self.dropped_by_client: Counter[int] = Counter()

    def __len__(self) -> int:
        return sum(len(q) for q in self._pending.values())

    @property
    def pending(self) -> int:
        return len(self)

    def pending_arrivals(self) -> list[Arrival]:
        return [a for cid in sorted(self._pending) for a in self._pending[cid]]

    def enqueue(self, arrival: Arrival) -> None:
        key = (arrival.client_id, arrival.batch_id)
        if key in self._seen:
            raise DuplicateArrivalError(f"duplicate arrival for client {key[0]}, batch {key[1]}")
        self._seen.add(key)
        queue = self._pending.setdefault(arrival.client_id, [])
        bisect.insort(queue, arrival, key=lambda a: a.batch_id)
        self.enqueued += 1

    def _heads(self, now_us: int) -> list[Arrival]:
        return [
            q[0]
            for cid, q in sorted(self._pending.items())
            if q and q[0].arrival_time_us <= now_us
        ]

    def _pop(self, arrival: Arrival) -> Arrival:
        queue = self._pending[arrival.client_id]
        queue.pop(0)
        if not queue:
            del self._pending[arrival.client_id]
        return arrival

    def _drop_stale(self, now_us: int, max_staleness_us: int) -> list[Arrival]:
        stale = []
        for cid in sorted(self._pending):
            queue = self._pending[cid]
            keep = []
            for a in queue:
                if a.arrival_time_us <= now_us and now_us - a.send_time_us > max_staleness_us:
                    stale.append(a)
                else:
                    keep.append(a)
            self._pending[cid] = keep
        self._pending = {cid: q for cid, q in self._pending.items() if q}
        for a in stale:
            self.dropped_by_client[a.client_id] += 1
        self.dropped += len(stale)
        return stale

    def next_arrival(self, policy: SchedulingPolicy, now_us: int) -> Arrival | Dropped | None:
        """Pick the next arrival to process at ``now_us``; ``None`` when nothing is eligible.

        Under STALENESS_BOUND a call that discards stale work returns :class:`Dropped`
        instead of an arrival; call again to get the FIFO choice among the survivors.
        """
        if policy.kind is PolicyKind.STALENESS_BOUND:
            stale = self._drop_stale(now_us, policy.max_staleness_us)
            if stale:
                return Dropped(tuple(stale))
        heads = self._heads(now_us)
        if not heads:
            return None
        if policy.kind is PolicyKind.ROUND_ROBIN:
            choice = min(heads, key=lambda a: (self._last_served.get(a.client_id, -1), a.client_id))
        else:
            choice = min(heads, key=lambda a: (a.arrival_time_us, a.client_id, a.batch_id))
        self._serve_clock += 1
        self._last_served[choice.client_id] = self._serve_clock
        self.dequeued += 1
        self.processed_by_client[choice.client_id] += 1
        return self._pop(choice)


@dataclass
class LatencyModel:
    """Per-client base delay plus uniform integer jitter in ``[0, jitter_us]``."""

    base_delay_us: dict[int, int]
    jitter_us: int = 0
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.jitter_us < 0 or any(d < 0 for d in self.base_delay_us.values()):
            raise ValidationError("delays and jitter must be non-negative")
        self._rng = np.random.default_rng(self.seed)

    def sample_latency(self, client_id: int) -> int:
        try:
            base = self.base_delay_us[client_id]
        except KeyError:
            raise UnknownClientError(f"unknown client {client_id}") from None
        if self.jitter_us == 0:
            return base
        return base + int(self._rng.integers(0, self.jitter_us, endpoint=True))


def sample_latency(model: LatencyModel, client_id: int) -> int:
    return model.sample_latency(client_id)


def enqueue(queue: ArrivalQueue, arrival: Arrival) -> None:
    queue.enqueue(arrival)


def next_arrival(queue: ArrivalQueue, policy: SchedulingPolicy, now_us: int):
    return queue.next_arrival(policy, now_us)
