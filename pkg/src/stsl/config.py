"""Experiment configuration: an INI file with fixed sections.

Grammar (every key optional unless noted; unknown sections or keys are errors)::

    [run]        seed, split, clients, train_steps, eval_every, batch_size,
                 eval_batch_size, lr, momentum
    [model]      preset = paper | custom; filters = 16, 32, ...; dense_units = 512, 10
    [data]       source = synthetic | cifar10; data_seed; synthetic_train;
                 synthetic_test; train_files; test_files; train_limit;
                 test_limit; partition = iid | label_skew; classes_per_client
    [scheduler]  policy = fifo | round_robin | staleness_bound; max_staleness_us;
                 latency_us (one value, or one per client); jitter_us;
                 server_time_us; client_time_us; horizon_us
    [output]     dir

Lists are comma-separated. Relative file paths resolve against the config
file's directory.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ValidationError
from .model import PAPER_DENSE, PAPER_FILTERS, ModelSpec
from .scheduler import PolicyKind, SchedulingPolicy


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    split: int = 1
    n_clients: int = 1
    train_steps: int = 100
    eval_every: int = 0
    batch_size: int = 32
    eval_batch_size: int = 256
    lr: float = 0.01
    momentum: float = 0.9

    model_preset: str = "paper"
    filters: tuple[int, ...] = PAPER_FILTERS
    dense_units: tuple[int, ...] = PAPER_DENSE

    source: str = "synthetic"
    data_seed: int = 0
    synthetic_train: int = 2000
    synthetic_test: int = 500
    train_files: tuple[str, ...] = ()
    test_files: tuple[str, ...] = ()
    train_limit: int | None = None
    test_limit: int | None = None
    partition: str = "iid"
    classes_per_client: int | None = None

    policy: str = "fifo"
    max_staleness_us: int | None = None
    latency_us: tuple[int, ...] = (0,)
    jitter_us: int = 0
    server_time_us: int = 0
    client_time_us: int = 0
    horizon_us: int | None = None

    output_dir: str | None = field(default=None, compare=False)

    # ------------------------------------------------------------------
    @property
    def model_spec(self) -> ModelSpec:
        if self.model_preset == "paper":
            return ModelSpec.paper()
        return ModelSpec(self.filters, self.dense_units)

    @property
    def scheduling_policy(self) -> SchedulingPolicy:
        return SchedulingPolicy(PolicyKind(self.policy), self.max_staleness_us)

    def client_latencies(self) -> dict[int, int]:
        lat = self.latency_us
        if len(lat) == 1:
            lat = lat * self.n_clients
        return {c: int(v) for c, v in enumerate(lat)}

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def validate(self, check_paths: bool = True) -> ExperimentConfig:
        def need(ok, fld, msg):
            if not ok:
                raise ConfigError(fld, msg)

        need(self.model_preset in ("paper", "custom"), "model.preset", "must be 'paper' or 'custom'")
        try:
            spec = self.model_spec
        except ValidationError as exc:
            raise ConfigError("model.filters", str(exc)) from None
        need(0 <= self.split <= spec.n_blocks, "run.split",
             f"must be in [0, {spec.n_blocks}], got {self.split}")
        need(self.n_clients >= 1, "run.clients", "must be at least 1")
        need(self.train_steps >= 1, "run.train_steps", "must be at least 1")
        need(self.eval_every >= 0, "run.eval_every", "must be >= 0 (0 = final evaluation only)")
        need(self.batch_size >= 1, "run.batch_size", "must be at least 1")
        need(self.eval_batch_size >= 1, "run.eval_batch_size", "must be at least 1")
        need(self.lr > 0, "run.lr", "must be positive")
        need(0 <= self.momentum < 1, "run.momentum", "must be in [0, 1)")
        need(self.source in ("synthetic", "cifar10"), "data.source", "must be 'synthetic' or 'cifar10'")
        need(self.partition in ("iid", "label_skew"), "data.partition", "must be 'iid' or 'label_skew'")
        if self.partition == "label_skew":
            cpc = self.classes_per_client
            need(cpc is not None and 1 <= cpc <= 10, "data.classes_per_client",
                 f"must be in [1, 10], got {cpc}")
        if self.source == "synthetic":
            need(self.synthetic_train >= self.n_clients, "data.synthetic_train",
                 "must be at least the number of clients")
            need(self.synthetic_test >= 1, "data.synthetic_test", "must be at least 1")
        else:
            need(bool(self.train_files), "data.train_files", "required when source = cifar10")
            need(bool(self.test_files), "data.test_files", "required when source = cifar10")
            if check_paths:
                for key, files in (("data.train_files", self.train_files), ("data.test_files", self.test_files)):
                    for f in files:
                        need(Path(f).is_file(), key, f"file not found: {f}")
        for key in ("train_limit", "test_limit"):
            v = getattr(self, key)
            need(v is None or v >= 1, f"data.{key}", "must be at least 1")
        try:
            self.scheduling_policy
        except (ValueError, ValidationError) as exc:
            raise ConfigError("scheduler.policy", str(exc)) from None
        need(len(self.latency_us) in (1, self.n_clients), "scheduler.latency_us",
             f"give one value or one per client ({self.n_clients})")
        need(min(self.latency_us) >= 0, "scheduler.latency_us", "must be non-negative")
        for key in ("jitter_us", "server_time_us", "client_time_us"):
            need(getattr(self, key) >= 0, f"scheduler.{key}", "must be non-negative")
        need(self.horizon_us is None or self.horizon_us >= 0, "scheduler.horizon_us", "must be non-negative")
        return self

    # ------------------------------------------------------------------
    def to_ini(self, include_output: bool = True) -> str:
        """Canonical text form: every field, fixed order."""

        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, tuple):
                return ", ".join(str(x) for x in v)
            return repr(v) if isinstance(v, float) else str(v)

        lines = []
        for section, keys in _LAYOUT.items():
            if section == "output" and not include_output:
                continue
            lines.append(f"[{section}]")
            for key, attr, _ in keys:
                lines.append(f"{key} = {fmt(getattr(self, attr))}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> bytes:
        """SHA-256 over the canonical form, excluding the output directory."""
        return hashlib.sha256(self.to_ini(include_output=False).encode()).digest()

    @classmethod
    def from_ini(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except UnicodeDecodeError as exc:
            raise ConfigError(str(path), f"not a text file: {exc}") from None
        return cls.from_text(text, base_dir=path.parent)

    @classmethod
    def from_text(cls, text: str, base_dir: Path | str = ".") -> ExperimentConfig:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("config", str(exc).replace("\n", " ")) from None
        values = {}
        for section in parser.sections():
            if section not in _LAYOUT:
                raise ConfigError(section, "unknown section")
            known = {key: (attr, conv) for key, attr, conv in _LAYOUT[section]}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                attr, conv = known[key]
                raw = raw.strip()
                try:
                    values[attr] = None if raw == "" and conv in _NULLABLE else conv(raw)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r}: {exc}") from None
        base = Path(base_dir)
        for attr in ("train_files", "test_files"):
            if attr in values:
                values[attr] = tuple(str((base / p).resolve()) for p in values[attr])
        if "output_dir" in values and values["output_dir"]:
            values["output_dir"] = str((base / values["output_dir"]).resolve())
        return cls(**values)


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in raw.split(",") if v.strip())


def _opt_int(raw: str) -> int | None:
    return int(raw)


def _lower(raw: str) -> str:
    return raw.strip().lower()


def _text(raw: str) -> str | None:
    return raw or None


_NULLABLE = (_opt_int, _text)

_LAYOUT = {
    "run": [
        ("seed", "seed", int),
        ("split", "split", int),
        ("clients", "n_clients", int),
        ("train_steps", "train_steps", int),
        ("eval_every", "eval_every", int),
        ("batch_size", "batch_size", int),
        ("eval_batch_size", "eval_batch_size", int),
        ("lr", "lr", float),
        ("momentum", "momentum", float),
    ],
    "model": [
        ("preset", "model_preset", _lower),
        ("filters", "filters", _int_list),
        ("dense_units", "dense_units", _int_list),
    ],
    "data": [
        ("source", "source", _lower),
        ("data_seed", "data_seed", int),
        ("synthetic_train", "synthetic_train", int),
        ("synthetic_test", "synthetic_test", int),
        ("train_files", "train_files", _str_list),
        ("test_files", "test_files", _str_list),
        ("train_limit", "train_limit", _opt_int),
        ("test_limit", "test_limit", _opt_int),
        ("partition", "partition", _lower),
        ("classes_per_client", "classes_per_client", _opt_int),
    ],
    "scheduler": [
        ("policy", "policy", _lower),
        ("max_staleness_us", "max_staleness_us", _opt_int),
        ("latency_us", "latency_us", _int_list),
        ("jitter_us", "jitter_us", int),
        ("server_time_us", "server_time_us", int),
        ("client_time_us", "client_time_us", int),
        ("horizon_us", "horizon_us", _opt_int),
    ],
    "output": [("dir", "output_dir", _text)],
}
