"""CSV/JSON rendering of per-step metrics.

CSV is canonical; JSON carries the same records plus the run checksum.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Iterable, List, Optional

from .simulation import RunResult, StepMetrics

COLUMNS = ["step", "wall_s", "preproc_s", "compute_s", "sort_s", "reduce_s", "pps",
           "fraction_moved", "rebuilds", "global_sort_reason"]
TIMING_COLUMNS = ("wall_s", "preproc_s", "compute_s", "sort_s", "reduce_s", "pps")
SUMMARY_STEP = "total"


def step_row(m: StepMetrics) -> dict:
    return {
        "step": m.step,
        "wall_s": m.wall_time,
        "preproc_s": m.preproc_time,
        "compute_s": m.compute_time,
        "sort_s": m.sort_time,
        "reduce_s": m.reduce_time,
        "pps": m.particles_per_second,
        "fraction_moved": m.fraction_moved,
        "rebuilds": m.rebuilds_this_step,
        "global_sort_reason": m.global_sort_reason,
    }


def summary_row(metrics: List[StepMetrics]) -> dict:
    """Column totals; ``pps`` is the mean, ``global_sort_reason`` counts fired sorts."""
    rows = [step_row(m) for m in metrics]
    out = {"step": SUMMARY_STEP}
    for key in ("wall_s", "preproc_s", "compute_s", "sort_s", "reduce_s", "fraction_moved"):
        out[key] = sum(r[key] for r in rows)
    out["pps"] = sum(r["pps"] for r in rows) / len(rows)
    out["rebuilds"] = sum(r["rebuilds"] for r in rows)
    out["global_sort_reason"] = sum(1 for r in rows if r["global_sort_reason"])
    return out


def records(metrics: List[StepMetrics], mode: Optional[str] = None) -> List[dict]:
    rows = [step_row(m) for m in metrics]
    if rows:
        rows.append(summary_row(metrics))
    if mode is not None:
        rows = [{"mode": mode, **r} for r in rows]
    return rows


def _fmt(value):
    # repr keeps floats round-trippable
    return repr(value) if isinstance(value, float) else value


def to_csv(rows: Iterable[dict], columns: List[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def report(metrics: List[StepMetrics], format: str = "csv", checksum=None) -> str:
    """One row per step plus a summary row; an empty run gives a header-only CSV."""
    rows = records(metrics)
    if format == "csv":
        return to_csv(rows, COLUMNS)
    if format == "json":
        doc = {"columns": COLUMNS, "rows": rows}
        if checksum is not None:
            doc["checksum"] = list(checksum)
        return json.dumps(doc, indent=2)
    raise ValueError(f"unknown format {format!r}")


def report_run(result: RunResult, format: str = "csv") -> str:
    return report(result.metrics, format, checksum=result.checksum)


def ablation_report(results: List[RunResult], format: str = "csv") -> str:
    rows = []
    for res in results:
        rows.extend(records(res.metrics, res.mode.value))
    columns = ["mode"] + COLUMNS
    if format == "csv":
        return to_csv(rows, columns)
    doc = {"columns": columns, "rows": rows,
           "checksums": {res.mode.value: list(res.checksum) for res in results}}
    return json.dumps(doc, indent=2)


def strip_timing(csv_text: str) -> List[dict]:
    """Parse CSV and drop wall-clock-derived columns (for determinism checks)."""
    return [{k: v for k, v in row.items() if k not in TIMING_COLUMNS}
            for row in csv.DictReader(io.StringIO(csv_text))]
