"""metrics.csv and summary.csv emission."""

from __future__ import annotations

import csv
import io
import statistics
from pathlib import Path

from .simulator import AGGREGATE, MetricsRecord

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = ("step", "sim_time_us", "split_k", "client_id", "loss", "accuracy", "processed", "dropped")
SUMMARY_COLUMNS = ("split_k", "n_seeds", "mean_accuracy", "std_accuracy", "min_accuracy", "max_accuracy")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, col)) for col in METRICS_COLUMNS])
    return buf.getvalue()


def write_metrics(path, records: list[MetricsRecord]) -> None:
    Path(path).write_text(metrics_csv(records))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for row in reader:
            cid = row["client_id"]
            out.append(MetricsRecord(
                step=int(row["step"]),
                sim_time_us=int(row["sim_time_us"]),
                split_k=int(row["split_k"]),
                client_id=cid if cid == AGGREGATE else int(cid),
                loss=float(row["loss"]) if row["loss"] else None,
                accuracy=float(row["accuracy"]) if row["accuracy"] else None,
                processed=int(row["processed"]),
                dropped=int(row["dropped"]),
            ))
        return out


def summarize(final_accuracy: dict[int, list[float]]) -> list[dict]:
    """Mean/stddev of final accuracy per split depth (sample stddev; 0 for one seed)."""
    rows = []
    for k in sorted(final_accuracy):
        accs = final_accuracy[k]
        rows.append({
            "split_k": k,
            "n_seeds": len(accs),
            "mean_accuracy": statistics.fmean(accs),
            "std_accuracy": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "min_accuracy": min(accs),
            "max_accuracy": max(accs),
        })
    return rows


def write_summary(path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("split_k", "n_seeds") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
