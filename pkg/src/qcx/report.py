"""JSON reports and CSV grid export.

Reports are plain dicts rendered with sorted keys, so a fixed configuration and
seed always produce the same bytes apart from the wall-time field. Non-finite
floats are written as the strings "inf", "-inf" and "nan" to keep the output
valid JSON.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Sequence

import numpy as np

SCHEMA_VERSION = "qcx-report-v1"
WALL_TIME_KEY = "wall_time_s"


def sanitize(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def build_report(subcommand: str, config: dict, result: dict, version: str,
                 wall_time: float | None = None) -> dict:
    """Assemble a report; ``result`` holds verdicts, witnesses and optional records."""
    rep = {"schema": SCHEMA_VERSION, "version": version, "subcommand": subcommand,
           "config": config, "result": result}
    if wall_time is not None:
        rep[WALL_TIME_KEY] = wall_time
    return sanitize(rep)


def dumps(report: dict) -> str:
    return json.dumps(sanitize(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def without_wall_time(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != WALL_TIME_KEY}


def write_report(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(report))


def csv_text(points: np.ndarray, values: Sequence[float]) -> str:
    """Header ``x1,...,xn,value`` then one row per point (RFC 4180, LF endings)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    if len(points) != len(values):
        raise ValueError("points and values differ in length")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow([f"x{i + 1}" for i in range(points.shape[1])] + ["value"])
    for p, v in zip(points, values):
        w.writerow([repr(float(x)) for x in p] + [sanitize(float(v)) if not math.isfinite(v) else repr(float(v))])
    return buf.getvalue()


def write_csv(path: str, points: np.ndarray, values: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(points, values))
