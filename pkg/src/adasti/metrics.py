"""Error metrics and the report written after evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    n_targets: int
    per_node_mae: list[float] = field(default_factory=list)
    per_node_rmse: list[float] = field(default_factory=list)
    config_fingerprint: str = ""
    seed: int = 0
    wall_clock: float = 0.0
    label: str = ""

    def comparable(self) -> dict:
        """Everything except timing, for reproducibility checks."""
        d = asdict(self)
        d.pop("wall_clock")
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls(**json.loads(Path(path).read_text()))


def masked_errors(pred, truth, targets):
    """MAE and RMSE over entries where ``targets`` is 1."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    sel = np.asarray(targets) > 0
    if not sel.any():
        raise ContractError("no target entries to evaluate")
    err = pred[sel] - truth[sel]
    return float(np.abs(err).mean()), float(np.sqrt(np.square(err).mean()))


def metrics_report(pred, truth, targets, **meta) -> MetricsReport:
    """Arrays shaped (..., N, L); per-node numbers aggregate over everything else."""
    mae, rmse = masked_errors(pred, truth, targets)
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    sel = np.asarray(targets) > 0
    err = np.where(sel, pred - truth, 0.0)
    axes = tuple(i for i in range(err.ndim) if i != err.ndim - 2)
    count = sel.sum(axis=axes)
    with np.errstate(invalid="ignore", divide="ignore"):
        node_mae = np.abs(err).sum(axis=axes) / count
        node_rmse = np.sqrt(np.square(err).sum(axis=axes) / count)
    return MetricsReport(
        mae=mae,
        rmse=rmse,
        n_targets=int(sel.sum()),
        per_node_mae=[None if np.isnan(v) else float(v) for v in node_mae],
        per_node_rmse=[None if np.isnan(v) else float(v) for v in node_rmse],
        **meta,
    )
