"""Deterministic CSV/JSON artifact writers.

All CSVs share a fixed 9-column prefix so downstream consumers can parse any
file with one schema; command-specific columns are appended after the prefix.
Floats are written with 17 significant digits (round-trippable for float64),
"undefined" marks values whose defining expression has no value (for example
cosine similarity against a zero vector), and empty cells mean "column not
applicable to this row".  Writers never emit timestamps, so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import OrderFit
from .samplers import TrajectoryRecord
from .schedule import Schedule, ScheduleKind

__all__ = [
    "CSV_PREFIX_COLUMNS",
    "UNDEFINED",
    "format_value",
    "write_steps_csv",
    "write_fit_csv",
    "write_frontier_csv",
    "write_summary_json",
]

CSV_PREFIX_COLUMNS = ["step", "t", "tau_norm", "e_tss", "cos_sim", "h", "error", "slope", "r_squared"]
UNDEFINED = "undefined"


def format_value(value) -> str:
    """Render one CSV cell: 17 significant digits for floats, empty for None."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_steps_csv(path: str | Path, record: TrajectoryRecord, schedule: Schedule) -> None:
    """One row per solver step, ordered from t = T down to t = 1.

    Appended columns: the step's solver coefficients a, b, c and the phase
    label.  The h column carries the level spacing for flow schedules and is
    empty otherwise (no single step size is meaningful for vp geometry).
    """
    header = CSV_PREFIX_COLUMNS + ["a", "b", "c", "phase"]
    rows = []
    for i, diag in enumerate(record.steps):
        t = diag.t
        h = abs(schedule.level(t) - schedule.level(t - 1)) if schedule.kind is ScheduleKind.FLOW else None
        cos = UNDEFINED if diag.cos_sim is None else diag.cos_sim
        rows.append([
            i + 1, t, diag.tau_norm, diag.e_tss, cos, h, None, None, None,
            diag.coeffs.a, diag.coeffs.b, diag.coeffs.c, diag.phase.value,
        ])
    _write_rows(Path(path), header, rows)


def write_fit_csv(path: str | Path, fits: list[tuple[str, OrderFit]]) -> None:
    """One row per (metric, step size); slope and r² repeat along each metric."""
    header = CSV_PREFIX_COLUMNS + ["metric"]
    rows = []
    for metric, fit in fits:
        for h, err in zip(fit.step_sizes, fit.errors):
            rows.append([None, None, None, None, None, h, err, fit.slope, fit.r_squared, metric])
    _write_rows(Path(path), header, rows)


def write_frontier_csv(path: str | Path, rows: list[dict]) -> None:
    """Quality-compute frontier: one row per swept parameter value."""
    header = ["variant", "parameter", "value", "nfe", "mean_log_density", "se_log_density", "runs"]
    _write_rows(Path(path), header, [[row[col] for col in header] for row in rows])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_summary_json(path: str | Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
