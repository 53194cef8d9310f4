"""Multi-label evaluation: per-class (C-) and overall (O-) P/R/F1 and AP.

Per-class metrics average class-wise ratios over all C classes; overall
metrics pool the counts first. A class is predicted present when its
probability is strictly greater than the threshold. Ratios with zero
denominator contribute 0, so no metric is ever NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "ConfusionCounts",
    "MetricsReport",
    "confusion_counts",
    "prf1",
    "average_precision",
    "evaluate",
]

METRIC_ORDER = ("c_ap", "c_p", "c_r", "c_f1", "o_ap", "o_p", "o_r", "o_f1")


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class counts: correct positives, predicted positives, ground-truth positives."""

    correct: np.ndarray
    predicted: np.ndarray
    actual: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=np.int64)
            object.__setattr__(self, f.name, arr)
        if not (self.correct.shape == self.predicted.shape == self.actual.shape):
            raise ValueError("count arrays must share one shape")
        if (self.correct > np.minimum(self.predicted, self.actual)).any():
            raise ValueError("correct count cannot exceed predicted or ground-truth counts")


@dataclass(frozen=True)
class MetricsReport:
    """The eight headline metrics, all in [0, 1]."""

    c_ap: float
    c_p: float
    c_r: float
    c_f1: float
    o_ap: float
    o_p: float
    o_r: float
    o_f1: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in METRIC_ORDER)

    def scaled(self) -> tuple[float, ...]:
        """Values multiplied by 100, the convention used in logs and tables."""
        return tuple(100.0 * v for v in self.values())

    def format_row(self) -> str:
        return " ".join(f"{k}={v:.2f}" for k, v in zip(METRIC_ORDER, self.scaled()))


def _check_matrix(probs, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets)
    if p.ndim != 2 or p.shape != y.shape:
        raise ValueError(f"probs shape {p.shape} and targets shape {y.shape} must be equal 2-D")
    return p, y


def confusion_counts(probs, targets, threshold: float = 0.5) -> ConfusionCounts:
    """Count per-class hits with the strictly-greater-than-threshold rule."""
    p, y = _check_matrix(probs, targets)
    pred = p > threshold
    pos = y == 1
    return ConfusionCounts(
        correct=(pred & pos).sum(axis=0),
        predicted=pred.sum(axis=0),
        actual=pos.sum(axis=0),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _harmonic(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def prf1(counts: ConfusionCounts) -> tuple[float, float, float, float, float, float]:
    """(C-P, C-R, C-F1, O-P, O-R, O-F1); zero-denominator terms count as 0."""
    num_classes = counts.correct.shape[0]
    c_p = sum(_ratio(int(c), int(p)) for c, p in zip(counts.correct, counts.predicted)) / num_classes
    c_r = sum(_ratio(int(c), int(g)) for c, g in zip(counts.correct, counts.actual)) / num_classes
    o_p = _ratio(int(counts.correct.sum()), int(counts.predicted.sum()))
    o_r = _ratio(int(counts.correct.sum()), int(counts.actual.sum()))
    return c_p, c_r, _harmonic(c_p, c_r), o_p, o_r, _harmonic(o_p, o_r)


def _ranked_ap(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mean precision at each positive, ranked by descending score.

    Ties break by ascending position, via a stable sort on negated scores.
    """
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    npos = int(hits.sum())
    if npos == 0:
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    cum_hits = np.arange(1, npos + 1)
    total = 0.0
    for h, r in zip(cum_hits, ranks):
        total += h / r
    return total / npos


def average_precision(scores, targets) -> tuple[float, float]:
    """(C-AP, O-AP).

    C-AP averages per-class AP over classes with at least one positive;
    O-AP ranks the flattened (sample, class) grid in row-major order.
    """
    s, y = _check_matrix(scores, targets)
    pos = y == 1
    per_class = [
        _ranked_ap(s[:, c], pos[:, c]) for c in range(s.shape[1]) if pos[:, c].any()
    ]
    if not per_class:
        raise ValueError("no class has a positive example; AP undefined")
    c_ap = sum(per_class) / len(per_class)
    o_ap = _ranked_ap(s.reshape(-1), pos.reshape(-1))
    return c_ap, o_ap


def evaluate(probs, targets, threshold: float = 0.5) -> MetricsReport:
    """Full report from probabilities and binary targets."""
    c_p, c_r, c_f1, o_p, o_r, o_f1 = prf1(confusion_counts(probs, targets, threshold))
    c_ap, o_ap = average_precision(probs, targets)
    return MetricsReport(c_ap=c_ap, c_p=c_p, c_r=c_r, c_f1=c_f1, o_ap=o_ap, o_p=o_p, o_r=o_r, o_f1=o_f1)
