"""Accuracy, per-class precision/recall/F1 and macro F1 from a confusion matrix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ["ConfusionMatrix", "MetricsReport", "confusion_matrix", "metrics_from_confusion", "metrics_report"]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValidationError("confusion counts must be nonnegative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(y_true, y_pred, num_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError("y_true and y_pred must have the same shape")
    if y_true.size and (min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(y_true * num_classes + y_pred, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    confusion: ConfusionMatrix

    @property
    def class_accuracy(self) -> np.ndarray:
        """Per-class accuracy as shown on a row-normalized confusion matrix (= recall)."""
        return self.recall

    def to_dict(self, class_names=None) -> dict:
        n = len(self.f1)
        names = list(class_names) if class_names is not None else [f"class_{i}" for i in range(n)]
        return {
            "accuracy": float(self.accuracy),
            "macro_f1": float(self.macro_f1),
            "num_samples": self.confusion.total,
            "class_names": names,
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "f1": [float(v) for v in self.f1],
            "confusion": self.confusion.counts.tolist(),
        }


def metrics_from_confusion(cm: ConfusionMatrix | np.ndarray) -> MetricsReport:
    """Metrics over the evaluated set; any zero denominator yields 0 for that entry."""
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(cm)
    c = cm.counts
    if cm.total == 0:
        raise ValidationError("cannot compute metrics on an empty evaluation set")
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(tp.sum() / cm.total),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        confusion=cm,
    )


def metrics_report(y_true, y_pred, num_classes: int) -> MetricsReport:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, num_classes))
