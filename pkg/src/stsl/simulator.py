"""Deterministic event-driven training of one server and several end-systems.

Each client keeps one batch in flight: it sends an ACTIVATION, waits for the
matching GRADIENT, updates its private lower layers, then sends the next
batch. The server pulls arrivals from the queue according to the scheduling
policy and applies one SGD update per processed message. Every message
crosses the wire format (encode on send, decode on receipt).
"""

from __future__ import annotations

import heapq
import itertools
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, PartitionPlan, load_cifar10, make_synthetic, partition_dataset
from .errors import ConfigError, ValidationError
from .model import (
    ModelPart,
    ModelParams,
    build_model,
    client_backward,
    client_forward,
    partition_model,
    predict,
    server_forward_backward,
)
from .protocol import MessageType, SmashedMessage, decode_message, encode_message
from .scheduler import Arrival, ArrivalQueue, Dropped, LatencyModel

log = logging.getLogger(__name__)

AGGREGATE = "AGGREGATE"


class EventKind(IntEnum):
    # Value order is the tie-break order for events at the same time.
    CLIENT_SEND = 0
    SERVER_PROCESS = 1
    GRADIENT_RETURN = 2
    EVAL_TICK = 3


@dataclass(order=True)
class SimEvent:
    time_us: int
    kind: EventKind
    client_id: int = -1
    batch_id: int = -1
    seq: int = 0


@dataclass
class MetricsRecord:
    step: int
    sim_time_us: int
    split_k: int
    client_id: int | str
    loss: float | None = None
    accuracy: float | None = None
    processed: int = 0
    dropped: int = 0


def derive_seed(base: int, *tags: int) -> int:
    """Independent 32-bit seed for a named sub-stream of ``base``."""
    return int(np.random.SeedSequence([base, *tags]).generate_state(1)[0])


class BatchSampler:
    """Endless mini-batches over a shard: reshuffle each epoch, drop the ragged tail."""

    def __init__(self, shard: Dataset, batch_size: int, seed: int):
        self.shard = shard
        self.batch_size = min(batch_size, len(shard))
        self._rng = np.random.default_rng(seed)
        self._order = self._rng.permutation(len(shard))
        self._cursor = 0

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cursor + self.batch_size > len(self._order):
            self._order = self._rng.permutation(len(self.shard))
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return self.shard.images[idx], self.shard.labels[idx]


@dataclass
class ClientState:
    client_id: int
    params: ModelParams
    part: ModelPart
    sampler: BatchSampler
    next_batch_id: int = 0
    caches: dict = field(default_factory=dict)
    updates: int = 0


@dataclass
class ServerState:
    params: ModelParams
    part: ModelPart
    queue: ArrivalQueue
    step: int = 0
    busy_until_us: int = 0


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[MetricsRecord]
    final_accuracy: float
    client_accuracy: dict[int, float]
    sent: int
    updates: int
    dropped: int
    in_flight_at_end: int
    processed_by_client: dict[int, int]
    dropped_by_client: dict[int, int]
    bytes_on_wire: int
    end_time_us: int
    server: ServerState
    clients: list[ClientState]

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records if r.loss is not None]

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        """Server and per-client parameters and momentum buffers, by qualified name."""
        out = {f"server/{n}": t for n, t in self.server.part.inventory().items()}
        for c in self.clients:
            out.update({f"client{c.client_id}/{n}": t for n, t in c.part.inventory().items()})
        return out


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.source == "synthetic":
        train = make_synthetic(cfg.synthetic_train, derive_seed(cfg.data_seed, 0))
        test = make_synthetic(cfg.synthetic_test, derive_seed(cfg.data_seed, 1))
    else:
        train = load_cifar10(cfg.train_files)
        test = load_cifar10(cfg.test_files)
    if cfg.train_limit:
        train = train.head(cfg.train_limit)
    if cfg.test_limit:
        test = test.head(cfg.test_limit)
    return train, test


def evaluate(client_part: ModelPart | None, server_part: ModelPart, test_set: Dataset,
             batch_size: int = 256) -> float:
    """Top-1 accuracy of ``client_part`` followed by ``server_part`` on ``test_set``."""
    if len(test_set) == 0:
        raise ValidationError("cannot evaluate on an empty test set")
    parts = [server_part] if client_part is None else [client_part, server_part]
    logits = predict(parts, test_set.images, batch_size)
    return float((logits.argmax(axis=1) == test_set.labels).mean())


Trace = Callable[[str, int, int, float | None, dict], None]


def run_experiment(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None,
                   trace: Trace | None = None) -> RunResult:
    """Run one spatio-temporal split-learning experiment.

    ``trace(kind, client_id, batch_id, loss, grads)`` is called after every
    server update (``kind == "server"``) and client update (``"client"``).
    """
    cfg.validate(check_paths=data is None)
    spec = cfg.model_spec
    k = cfg.split
    train, test = data if data is not None else load_data(cfg)
    if cfg.n_clients > len(train):
        raise ConfigError("run.clients", f"{cfg.n_clients} clients but {len(train)} training samples")
    shards = partition_dataset(
        train,
        PartitionPlan(cfg.partition, cfg.n_clients, derive_seed(cfg.seed, 2), cfg.classes_per_client),
    )
    for c, shard in enumerate(shards):
        if len(shard) == 0:
            raise ConfigError("data.partition", f"client {c} received no samples")

    full = build_model(spec, cfg.seed)
    cut = partition_model(full, k)
    server = ServerState(full, cut.server_part, ArrivalQueue())
    clients = []
    for c in range(cfg.n_clients):
        # client 0 shares the seed of the server model so one client reproduces the unsplit net
        params = full if c == 0 else build_model(spec, derive_seed(cfg.seed, 1, c))
        part = cut.client_part if c == 0 else partition_model(params, k).client_part
        sampler = BatchSampler(shards[c], cfg.batch_size, derive_seed(cfg.seed, 4, c))
        clients.append(ClientState(c, params, part, sampler))

    latency = LatencyModel(cfg.client_latencies(), cfg.jitter_us, derive_seed(cfg.seed, 3))
    policy = cfg.scheduling_policy
    records: list[MetricsRecord] = []
    events: list[SimEvent] = []
    seq = itertools.count()
    in_transit: dict[tuple[int, int], SmashedMessage] = {}
    totals = {"sent": 0, "bytes": 0}
    flags = {"stopping": False, "eval_pending": False, "resume": False}
    last_eval_step = [-1]
    now = 0

    def schedule(time_us, kind, client_id=-1, batch_id=-1):
        heapq.heappush(events, SimEvent(time_us, kind, client_id, batch_id, next(seq)))

    def transmit(msg: SmashedMessage) -> SmashedMessage:
        wire = encode_message(msg)
        totals["bytes"] += len(wire)
        return decode_message(wire)

    def run_eval(t: int) -> None:
        if len(clients) > 1 and k > 0:
            per_client = {c.client_id: evaluate(c.part, server.part, test, cfg.eval_batch_size)
                          for c in clients}
        else:
            per_client = {0: evaluate(clients[0].part if k else None, server.part, test,
                                      cfg.eval_batch_size)}
        q = server.queue
        records.append(MetricsRecord(server.step, t, k, AGGREGATE, None, per_client[0],
                                     q.dequeued, q.dropped))
        if len(per_client) > 1:
            for cid, acc in per_client.items():
                records.append(MetricsRecord(server.step, t, k, cid, None, acc, q.dequeued, q.dropped))
        last_eval_step[0] = server.step
        result_acc.clear()
        result_acc.update(per_client)
        log.debug("eval step=%d t=%dus acc=%.4f", server.step, t, per_client[0])

    result_acc: dict[int, float] = {}

    def on_client_send(t: int, cid: int) -> None:
        client = clients[cid]
        images, labels = client.sampler.next_batch()
        smashed, cache = client_forward(client.part, images)
        bid = client.next_batch_id
        client.next_batch_id += 1
        client.caches[bid] = cache
        send_t = t + cfg.client_time_us
        msg = transmit(SmashedMessage(MessageType.ACTIVATION, cid, bid, send_t, smashed, labels))
        arrive_t = send_t + latency.sample_latency(cid)
        server.queue.enqueue(Arrival(msg, arrive_t, send_t))
        totals["sent"] += 1
        schedule(arrive_t, EventKind.SERVER_PROCESS, cid, bid)

    def on_server_process(t: int) -> None:
        if t < server.busy_until_us:
            return
        if flags["eval_pending"]:
            flags["resume"] = True
            return
        while True:
            res = server.queue.next_arrival(policy, t)
            if res is None:
                return
            if isinstance(res, Dropped):
                for a in res.arrivals:
                    clients[a.client_id].caches.pop(a.batch_id)
                    # the drop notice travels back like a gradient would
                    schedule(t + latency.sample_latency(a.client_id), EventKind.CLIENT_SEND, a.client_id)
                continue
            break
        msg = res.message
        loss, grad_cut, grads = server_forward_backward(server.part, msg.payload, msg.labels)
        server.part.apply_sgd(grads, cfg.lr, cfg.momentum)
        server.step += 1
        if trace:
            trace("server", msg.client_id, msg.batch_id, loss, grads)
        q = server.queue
        records.append(MetricsRecord(server.step, t, k, msg.client_id, loss, None, q.dequeued, q.dropped))
        done = t + cfg.server_time_us
        server.busy_until_us = done
        reply = transmit(SmashedMessage(MessageType.GRADIENT, msg.client_id, msg.batch_id, done, grad_cut))
        in_transit[(msg.client_id, msg.batch_id)] = reply
        schedule(done + latency.sample_latency(msg.client_id), EventKind.GRADIENT_RETURN,
                 msg.client_id, msg.batch_id)
        if server.step >= cfg.train_steps:
            flags["stopping"] = True
        if server.step >= cfg.train_steps or (cfg.eval_every and server.step % cfg.eval_every == 0):
            flags["eval_pending"] = True
            schedule(done, EventKind.EVAL_TICK)
        if not flags["stopping"]:
            schedule(done, EventKind.SERVER_PROCESS)

    def on_gradient_return(t: int, cid: int, bid: int) -> None:
        client = clients[cid]
        reply = in_transit.pop((cid, bid))
        grads = client_backward(client.part, client.caches.pop(bid), reply.payload)
        client.part.apply_sgd(grads, cfg.lr, cfg.momentum)
        client.updates += 1
        if trace:
            trace("client", cid, bid, None, grads)
        if not flags["stopping"]:
            schedule(t, EventKind.CLIENT_SEND, cid)

    def on_eval(t: int) -> None:
        run_eval(t)
        flags["eval_pending"] = False
        if flags["resume"] and not flags["stopping"]:
            flags["resume"] = False
            schedule(t, EventKind.SERVER_PROCESS)

    for c in clients:
        schedule(0, EventKind.CLIENT_SEND, c.client_id)

    while events:
        ev = events[0]
        if cfg.horizon_us is not None and ev.time_us > cfg.horizon_us:
            break
        heapq.heappop(events)
        now = ev.time_us
        if ev.kind is EventKind.CLIENT_SEND:
            if not flags["stopping"]:
                on_client_send(now, ev.client_id)
        elif ev.kind is EventKind.SERVER_PROCESS:
            if not flags["stopping"]:
                on_server_process(now)
        elif ev.kind is EventKind.GRADIENT_RETURN:
            on_gradient_return(now, ev.client_id, ev.batch_id)
        else:
            on_eval(now)

    if last_eval_step[0] != server.step or not result_acc:
        run_eval(now)

    queue = server.queue
    in_flight = len(queue)
    open_caches = sum(len(c.caches) for c in clients)
    # every remaining cache belongs to a queued arrival or an undelivered gradient
    assert open_caches == in_flight + len(in_transit), (open_caches, in_flight, len(in_transit))
    for c in clients:
        c.caches.clear()
    assert totals["sent"] == server.step + queue.dropped + in_flight

    return RunResult(
        config=cfg,
        records=records,
        final_accuracy=result_acc[0],
        client_accuracy=dict(result_acc),
        sent=totals["sent"],
        updates=server.step,
        dropped=queue.dropped,
        in_flight_at_end=in_flight,
        processed_by_client={c.client_id: queue.processed_by_client[c.client_id] for c in clients},
        dropped_by_client={c.client_id: queue.dropped_by_client[c.client_id] for c in clients},
        bytes_on_wire=totals["bytes"],
        end_time_us=now,
        server=server,
        clients=clients,
    )
