"""RMSE / MAE over a held-out position set, and report output."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .data import EntrySplit, HdiTensor, check_positions, denormalize

REPORT_CSV_HEADER = ("model", "dataset", "rmse", "mae", "n", "scale")


def _pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if truth.size == 0:
        raise ValueError("metrics need at least one value")
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.size} truth vs {pred.size} predictions")
    if not (np.all(np.isfinite(truth)) and np.all(np.isfinite(pred))):
        raise ValueError("metrics need finite inputs")
    return truth, pred


def rmse(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    d = truth - pred
    return float(np.sqrt(np.sum(d * d) / d.size))


def mae(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    return float(np.sum(np.abs(truth - pred)) / truth.size)


def improvement_pct(ours: float, theirs: float) -> float:
    """How much lower ``ours`` is than ``theirs``, as a percentage of ``theirs``."""
    if theirs == 0:
        raise ValueError("reference metric is zero")
    return 100.0 * (theirs - ours) / theirs


def positions_digest(positions) -> str:
    """Order-independent SHA-256 of a (n, 3) position list."""
    p = np.asarray(positions, dtype="<i8").reshape(-1, 3)
    p = p[np.lexsort(p.T[::-1])]
    return hashlib.sha256(p.tobytes()).hexdigest()


@dataclass(frozen=True)
class MetricReport:
    model_name: str
    dataset_label: str
    rmse: float
    mae: float
    n: int
    scale: str
    omega_sha256: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_model(predict_fn: Callable[[np.ndarray], Sequence[float]], t: HdiTensor, split: EntrySplit,
                   model_name: str = "model", dataset_label: str = "dataset", raw: bool = False) -> MetricReport:
    """Score ``predict_fn(positions) -> values`` on the test positions of ``split``.

    Predictions are in normalized units; with ``raw=True`` truth and
    predictions are both mapped back to physical units first.
    """
    omega = check_positions(t, split.test)
    if len(omega) == 0:
        raise ValueError("split has no test positions")
    pred = np.asarray(predict_fn(omega), dtype=np.float64)
    if pred.shape != (len(omega),):
        raise ValueError(f"{model_name}: got {pred.shape} predictions for {len(omega)} positions")
    bad = ~np.isfinite(pred)
    if bad.any():
        raise ValueError(f"{model_name}: non-finite prediction at position {tuple(omega[np.argmax(bad)])}")
    truth = t.at(omega)
    if raw:
        truth = denormalize(t, omega, truth)
        pred = denormalize(t, omega, pred)
    r, a = rmse(truth, pred), mae(truth, pred)
    assert r >= a * (1 - 1e-12), (r, a)
    return MetricReport(model_name, dataset_label, r, a, len(omega), "raw" if raw else "normalized",
                        positions_digest(omega))


def write_report_csv(path, reports: Sequence[MetricReport]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_CSV_HEADER)
        for r in sorted(reports, key=lambda r: r.model_name):
            w.writerow([r.model_name, r.dataset_label, repr(r.rmse), repr(r.mae), r.n, r.scale])


def improvement_table(reports: Sequence[MetricReport], reference: str) -> list[dict]:
    """Percent by which ``reference`` beats each model (itself included, at 0.0)."""
    by_name = {r.model_name: r for r in reports}
    ref = by_name[reference]
    return [
        {
            "model": reference,
            "versus": r.model_name,
            "rmse_improvement_pct": improvement_pct(ref.rmse, r.rmse),
            "mae_improvement_pct": improvement_pct(ref.mae, r.mae),
        }
        for r in sorted(reports, key=lambda r: r.model_name)
    ]


def write_improvement_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "versus", "rmse_improvement_pct", "mae_improvement_pct"],
                           lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
