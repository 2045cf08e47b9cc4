"""Evaluation metrics: mean absolute error and on/off classification accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .timeseries import AlignedDataset, PowerSeries

DEFAULT_ON_THRESHOLD_W = 10.0


def mae(truth, pred) -> float:
    """Mean absolute deviation in watts between two equal-length arrays."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise DataError("mae: length mismatch")
    if t.size == 0:
        raise DataError("mae: empty input")
    if np.isnan(t).any() or np.isnan(p).any():
        raise DataError("mae: gaps not allowed")
    return float(np.mean(np.abs(t - p)))


def on_off_states(series, threshold: float = DEFAULT_ON_THRESHOLD_W) -> np.ndarray:
    """Boolean ON mask: strictly above the threshold counts as ON."""
    if threshold < 0:
        raise DataError("threshold must be >= 0")
    values = series.values if isinstance(series, PowerSeries) else np.asarray(series)
    return values > threshold


def classification_accuracy(truth_states, pred_states) -> float:
    """(TP + TN) / (P + N) over two boolean state arrays."""
    t = np.asarray(truth_states, dtype=bool)
    p = np.asarray(pred_states, dtype=bool)
    if t.shape != p.shape:
        raise DataError("classification_accuracy: length mismatch")
    if t.size == 0:
        raise DataError("classification_accuracy: empty input")
    return float(np.mean(t == p))


@dataclass(frozen=True)
class MetricReport:
    """Per-appliance and overall scores for one evaluation pass."""

    mae_per_appliance: tuple[tuple[str, float], ...]
    accuracy_per_appliance: tuple[tuple[str, float], ...]
    n_samples: int
    threshold_watts: float

    @property
    def mae_overall(self) -> float:
        return float(np.mean([v for _, v in self.mae_per_appliance]))

    @property
    def accuracy_overall(self) -> float:
        return float(np.mean([v for _, v in self.accuracy_per_appliance]))

    def to_record(self) -> dict:
        """Flat key/value form for the trial log."""
        rec = {"mae": self.mae_overall, "accuracy": self.accuracy_overall,
               "n_samples": self.n_samples, "threshold_watts": self.threshold_watts}
        for label, v in self.mae_per_appliance:
            rec[f"mae.{label}"] = v
        for label, v in self.accuracy_per_appliance:
            rec[f"accuracy.{label}"] = v
        return rec


def evaluate_predictions(truth: AlignedDataset, predictions,
                         threshold: float = DEFAULT_ON_THRESHOLD_W) -> MetricReport:
    """Score per-appliance predictions against an aligned ground-truth dataset.

    ``predictions`` is one PowerSeries per appliance, matched by label.
    """
    preds = {p.label: p for p in predictions}
    maes, accs = [], []
    for app in truth.appliances:
        if app.label not in preds:
            raise DataError(f"missing prediction for appliance {app.label!r}")
        pred = preds[app.label]
        if len(pred) != len(app):
            raise DataError(f"prediction grid mismatch for {app.label!r}")
        maes.append((app.label, mae(app.values, pred.values)))
        accs.append((app.label, classification_accuracy(
            on_off_states(app.values, threshold), on_off_states(pred.values, threshold))))
    return MetricReport(tuple(maes), tuple(accs), len(truth), threshold)
