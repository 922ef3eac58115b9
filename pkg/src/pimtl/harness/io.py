"""Output writers shared by the experiment runners."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

STEP_COLUMNS = ("step", "task_id", "batch_score", "is_weight", "objective", "grad_norm")
EPOCH_COLUMNS = ("seed", "epoch", "condition", "task_id", "train_reward", "test_reward", "annualized_return")


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path, columns, rows) -> Path:
    """Write dict rows (or objects with matching attributes); floats in full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            get = row.get if isinstance(row, dict) else (lambda k, r=row: getattr(r, k))
            w.writerow([_cell(get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def summarize(values) -> dict:
    """Mean and interquartile range across seeds."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "iqr_low": None, "iqr_high": None, "n_seeds": 0}
    lo, hi = np.percentile(v, [25, 75])
    return {"mean": float(v.mean()), "iqr_low": float(lo), "iqr_high": float(hi), "n_seeds": int(v.size)}
