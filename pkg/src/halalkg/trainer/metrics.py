"""Binary classification metrics over (product, halal) predictions."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "MetricsReport":
        total = tp + fp + tn + fn
        accuracy = (tp + tn) / total if total else 0.0
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(int(tp), int(fp), int(tn), int(fn), accuracy, precision, recall, f1,
                   tp + fp > 0, tp + fn > 0)

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(preds, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ShapeMismatch(f"preds {preds.shape} vs labels {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    hat = preds >= threshold
    pos = labels == 1
    return (int((hat & pos).sum()), int((hat & ~pos).sum()),
            int((~hat & ~pos).sum()), int((~hat & pos).sum()))


def evaluate(preds, labels, threshold: float = 0.5) -> MetricsReport:
    """Threshold probabilities (``>= threshold`` is halal) and score them."""
    return MetricsReport.from_counts(*confusion(preds, labels, threshold))


def threshold_sweep(preds, labels, thresholds=None) -> list[tuple[float, MetricsReport]]:
    """Diagnostic only; training and reporting always use the configured threshold."""
    if thresholds is None:
        thresholds = np.linspace(0.05, 0.95, 19)
    return [(float(t), evaluate(preds, labels, float(t))) for t in thresholds]
