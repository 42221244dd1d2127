from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Iterable

from .runner import AGGREGATE, BenchRecord

# metrics where larger values are better; everything else is a cost
HIGHER_IS_BETTER = {"throughput", "throughput_median"}

SUMMARY_COLUMNS = ("mode", "payload_bytes", "n_workers", "metric_name", "unit",
                   "baseline", "proxied", "improvement")


@dataclass(frozen=True)
class SummaryRow:
    mode: str
    payload_bytes: int
    n_workers: int
    metric_name: str
    unit: str
    baseline: float | None
    proxied: float | None
    improvement: float | None  # fraction; None marks an unpaired row


def relative_improvement(baseline: float, proxied: float, higher_is_better: bool = False) -> float:
    """``(baseline - proxied) / baseline`` for costs; the mirror image for
    rates, so a positive value always means proxying helped."""
    if baseline == 0:
        return 0.0 if proxied == baseline else float("nan")
    if higher_is_better:
        return (proxied - baseline) / baseline
    return (baseline - proxied) / baseline


def summarize(records: Iterable[BenchRecord]) -> list[SummaryRow]:
    """Pair aggregate off/on rows per configuration."""
    groups: dict[tuple, dict[str, BenchRecord]] = {}
    for r in records:
        if r.repetition != AGGREGATE or r.metric_name == "leaked_keys":
            continue
        groups.setdefault((r.mode, r.payload_bytes, r.n_workers, r.metric_name), {})[r.proxy] = r
    rows = []
    for (mode, size, n, metric), pair in sorted(groups.items()):
        off, on = pair.get("off"), pair.get("on")
        unit = (off or on).unit
        improvement = None
        if off is not None and on is not None:
            improvement = relative_improvement(off.value, on.value, metric in HIGHER_IS_BETTER)
        rows.append(SummaryRow(mode, size, n, metric, unit,
                               off.value if off else None, on.value if on else None, improvement))
    return rows


def write_summary_csv(rows: Iterable[SummaryRow], path) -> None:
    assert tuple(f.name for f in fields(SummaryRow)) == SUMMARY_COLUMNS
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, SUMMARY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(row).items()})


def _fmt(v, unit=""):
    if v is None:
        return "-"
    if unit == "s":
        return f"{v * 1e3:.3f} ms"
    if isinstance(v, float) and not v.is_integer():
        return f"{v:.4g}"
    return f"{int(v)}"


def format_table(rows: Iterable[SummaryRow]) -> str:
    header = ["mode", "payload", "workers", "metric", "baseline", "proxied", "improvement"]
    lines = [header]
    for r in rows:
        imp = "gap" if r.improvement is None else f"{r.improvement * 100:+.1f}%"
        lines.append([r.mode, str(r.payload_bytes), str(r.n_workers), r.metric_name,
                      _fmt(r.baseline, r.unit), _fmt(r.proxied, r.unit), imp])
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in lines)


RECORD_COLUMNS = tuple(f.name for f in fields(BenchRecord))


def write_records_csv(records: Iterable[BenchRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, RECORD_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(asdict(r))


def read_records_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as f:
        return [
            BenchRecord(row["mode"], row["proxy"], int(row["payload_bytes"]), int(row["n_workers"]),
                        row["metric_name"], float(row["value"]), row["unit"], int(row["repetition"]))
            for row in csv.DictReader(f)
        ]
