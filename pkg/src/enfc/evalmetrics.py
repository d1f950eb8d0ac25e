"""Forecast scoring: absolute errors, explained variance, coverage
windows, and interval calibration sweeps.

All metrics operate on the original scale (patients or months), never on
the model's internal log scale. Interval membership and window bounds
are closed on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, DomainError, StructuralError
from .models import predict_interval

DEFAULT_SIGNIFICANCES = (0.5, 0.4, 0.3, 0.2, 0.1, 0.05)
CALIBRATION_HEADER = "significance,level,accuracy,median_width"


@dataclass(frozen=True)
class PairedOutcomes:
    """Aligned truths and predictions, optionally with one prediction
    interval per pair."""

    truths: np.ndarray
    predictions: np.ndarray
    intervals: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "truths",
                           np.asarray(self.truths, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "predictions",
                           np.asarray(self.predictions, dtype=np.float64).reshape(-1))
        if self.truths.shape != self.predictions.shape:
            raise StructuralError(
                f"{self.truths.size} truths vs {self.predictions.size} predictions")
        if np.any(self.truths < 0.0):
            raise StructuralError("truths must be >= 0")
        if self.intervals is not None:
            object.__setattr__(self, "intervals", tuple(self.intervals))
            if len(self.intervals) != self.truths.size:
                raise StructuralError(
                    f"{len(self.intervals)} intervals vs {self.truths.size} pairs")

    def __len__(self) -> int:
        return int(self.truths.size)


def _absolute_errors(pairs: PairedOutcomes) -> np.ndarray:
    if len(pairs) == 0:
        raise StructuralError("no pairs to score")
    return np.abs(pairs.truths - pairs.predictions)


def mae(pairs: PairedOutcomes) -> float:
    return float(np.mean(_absolute_errors(pairs)))


def medae(pairs: PairedOutcomes) -> float:
    return float(np.median(_absolute_errors(pairs)))


def r2(pairs: PairedOutcomes) -> float:
    """1 - SS_res/SS_tot, SS_tot taken about the truth mean."""
    if len(pairs) < 2:
        raise StructuralError("r2 needs at least 2 pairs")
    ss_tot = float(np.sum((pairs.truths - pairs.truths.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateDataError("r2 undefined: truths have zero variance")
    ss_res = float(np.sum((pairs.truths - pairs.predictions) ** 2))
    return 1.0 - ss_res / ss_tot


def window_coverage(pairs: PairedOutcomes, window_months: float = 6.0) -> float:
    """Fraction of pairs whose truth falls inside a window of the given
    total width centered on the prediction."""
    if window_months <= 0.0:
        raise DomainError("window_months must be positive")
    return float(np.mean(_absolute_errors(pairs) <= window_months / 2.0))


def _interval_scores(truths: np.ndarray, intervals) -> tuple:
    lows = np.array([interval.lower for interval in intervals])
    highs = np.array([interval.upper for interval in intervals])
    inside = (truths >= lows) & (truths <= highs)
    return float(np.mean(inside)), float(np.median(highs - lows))


def interval_metrics(pairs: PairedOutcomes) -> tuple:
    """(accuracy, median width) of the attached intervals."""
    if pairs.intervals is None:
        raise StructuralError("pairs carry no intervals")
    if len(pairs) == 0:
        raise StructuralError("no pairs to score")
    return _interval_scores(pairs.truths, pairs.intervals)


@dataclass(frozen=True)
class CalibrationRow:
    significance: float
    level: float
    accuracy: float
    median_width: float


def calibration_sweep(checkpoint, trials, truths,
                      significances=DEFAULT_SIGNIFICANCES) -> list:
    """Interval accuracy and width per significance, for the confidence
    versus sharpness trade-off curve."""
    trials = list(trials)
    if not trials:
        raise StructuralError("no pairs to score")
    truths = np.asarray(truths, dtype=np.float64).reshape(-1)
    if truths.size != len(trials):
        raise StructuralError(f"{truths.size} truths vs {len(trials)} trials")
    rows = []
    for significance in significances:
        significance = float(significance)
        intervals = [predict_interval(checkpoint, trial, significance)
                     for trial in trials]
        accuracy, median_width = _interval_scores(truths, intervals)
        rows.append(CalibrationRow(significance=significance,
                                   level=1.0 - significance,
                                   accuracy=accuracy,
                                   median_width=median_width))
    return rows


def calibration_csv(rows) -> str:
    lines = [CALIBRATION_HEADER]
    for row in rows:
        lines.append(f"{row.significance:.10g},{row.level:.10g},"
                     f"{row.accuracy:.10g},{row.median_width:.10g}")
    return "\n".join(lines) + "\n"


def metrics_report(pairs: PairedOutcomes, window_months: float = 6.0) -> dict:
    """Summary dict for serialization; the interval block appears when
    the pairs carry intervals."""
    report = {
        "mae": mae(pairs),
        "r2": r2(pairs),
        "medae": medae(pairs),
        "coverage_6mo": window_coverage(pairs, window_months),
    }
    if pairs.intervals is not None:
        accuracy, median_width = interval_metrics(pairs)
        report["interval"] = {
            "level": pairs.intervals[0].level,
            "accuracy": accuracy,
            "median_width": median_width,
        }
    return report
