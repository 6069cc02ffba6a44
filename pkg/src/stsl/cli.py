"""Command-line entry point: ``stsl <verb> ...``.

Exit codes: 0 ok, 1 validation, 2 runtime, 3 IO.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import backend
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import Dataset, make_synthetic, write_cifar10
from .errors import CheckpointError, ConfigError, FormatError, StslError, ValidationError
from .metrics import METRICS_SCHEMA_VERSION, summarize, write_metrics, write_summary
from .privacy import dump_views
from .simulator import RunResult, derive_seed, load_data, run_experiment
from .tensor import ConvParams

log = logging.getLogger("stsl")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.stck"


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def prepare_output(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError("--output", f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_ini(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "output", None):
        cfg = cfg.replace(output_dir=str(Path(args.output).resolve()))
    if not cfg.output_dir:
        raise ConfigError("output.dir", "no output directory (set [output] dir or pass --output)")
    return cfg.validate()


def write_run(cfg: ExperimentConfig, result: RunResult, out: Path) -> dict:
    """Write metrics.csv, the checkpoint, the config echo and manifest.json into ``out``."""
    write_metrics(out / "metrics.csv", result.records)
    save_checkpoint(out / CHECKPOINT_NAME, result.checkpoint_tensors(), cfg.config_hash())
    (out / "config.ini").write_text(cfg.to_ini(include_output=False))
    manifest = {
        "config_hash": cfg.config_hash().hex(),
        "metrics_schema": METRICS_SCHEMA_VERSION,
        "split_k": cfg.split,
        "seed": cfg.seed,
        "final_accuracy": result.final_accuracy,
        "client_accuracy": {str(c): a for c, a in result.client_accuracy.items()},
        "sent": result.sent,
        "updates": result.updates,
        "dropped": result.dropped,
        "in_flight_at_end": result.in_flight_at_end,
        "processed_by_client": {str(c): n for c, n in result.processed_by_client.items()},
        "bytes_on_wire": result.bytes_on_wire,
        "end_time_us": result.end_time_us,
        "files": {
            name: git_blob_hash((out / name).read_bytes())
            for name in ("config.ini", "metrics.csv", CHECKPOINT_NAME)
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = prepare_output(Path(cfg.output_dir), args.force)
    log.info("training split=%d clients=%d steps=%d backend=%s", cfg.split, cfg.n_clients,
             cfg.train_steps, backend.name)
    result = run_experiment(cfg)
    write_run(cfg, result, out)
    print(f"final accuracy {result.final_accuracy:.4f} after {result.updates} server updates -> {out}")
    return EXIT_OK


def _sweep_one(job):
    cfg, out = job
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    write_run(cfg, result, out)
    return cfg.split, cfg.seed, result.final_accuracy


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = prepare_output(Path(cfg.output_dir), args.force)
    jobs = []
    for k in args.splits:
        for seed in args.seeds:
            run_cfg = cfg.replace(split=k, seed=seed).validate()
            jobs.append((run_cfg, out / f"k{k}_seed{seed}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(job) for job in jobs]
    by_k: dict[int, list[float]] = {}
    for k, seed, acc in results:
        by_k.setdefault(k, []).append(acc)
        log.info("k=%d seed=%d accuracy=%.4f", k, seed, acc)
    rows = summarize(by_k)
    write_summary(out / "summary.csv", rows)
    for row in rows:
        print(f"k={row['split_k']}: mean accuracy {row['mean_accuracy']:.4f} "
              f"(std {row['std_accuracy']:.4f}, {row['n_seeds']} seeds)")
    return EXIT_OK


def cmd_dump_activations(args) -> int:
    ckpt_path = Path(args.checkpoint)
    config_path = Path(args.config) if args.config else ckpt_path.parent / "config.ini"
    cfg = ExperimentConfig.from_ini(config_path).validate()
    ckpt = load_checkpoint(ckpt_path, cfg.config_hash(), allow_mismatch=args.ignore_hash)
    owner = f"client{args.client}" if cfg.split > 0 else "server"
    try:
        block1 = ConvParams(ckpt.tensors[f"{owner}/block1.weight"], ckpt.tensors[f"{owner}/block1.bias"])
    except KeyError:
        raise CheckpointError(f"checkpoint has no block-1 parameters for {owner}") from None
    train, test = load_data(cfg)
    dataset: Dataset = train if args.subset == "train" else test
    if not 0 <= args.index < len(dataset):
        raise ValidationError(f"--index {args.index} out of range for {len(dataset)} {args.subset} images")
    out = prepare_output(Path(args.output), args.force)
    paths = dump_views(dataset.images[args.index], block1, out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    if args.n < 1:
        raise ValidationError("--n must be at least 1")
    out = prepare_output(Path(args.output), args.force)
    write_cifar10(out / "train_batch.bin", make_synthetic(args.n, derive_seed(args.seed, 0)))
    if args.test_n:
        write_cifar10(out / "test_batch.bin", make_synthetic(args.test_n, derive_seed(args.seed, 1)))
    print(f"wrote {args.n} training images to {out / 'train_batch.bin'}")
    return EXIT_OK


def cmd_inspect_checkpoint(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    total = sum(t.size for t in ckpt.tensors.values())
    print(f"version {ckpt.version}  config {ckpt.config_hash.hex()}")
    print(f"{len(ckpt.tensors)} tensors, {total} values")
    for name, t in ckpt.tensors.items():
        print(f"  {name:40s} {'x'.join(map(str, t.shape)):>16s}  |max|={float(abs(t).max()):.4g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stsl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="experiment config (INI)")
        p.add_argument("--output", help="output directory (overrides [output] dir)")
        if seed:
            p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("train", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run split depths x seeds and summarize")
    common(p, seed=False)
    p.add_argument("--splits", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-activations", help="write original / conv / pooled views as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="defaults to config.ini next to the checkpoint")
    p.add_argument("--subset", choices=("train", "test"), default="train")
    p.add_argument("--client", type=int, default=0, help="whose block-1 layers to use")
    p.add_argument("--ignore-hash", action="store_true", help="warn instead of failing on config mismatch")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_dump_activations)

    p = sub.add_parser("gen-synthetic", help="write a synthetic set in CIFAR-10 binary format")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--test-n", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("inspect-checkpoint", help="list the tensors in a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect_checkpoint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StslError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
