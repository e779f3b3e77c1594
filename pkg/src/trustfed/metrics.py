"""Multi-class classification metrics used as trust criteria."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from trustfed.model import ModelParams, predict


@dataclass(frozen=True)
class MetricVector:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def as_row(self) -> list[float]:
        return [self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1]


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], k: int) -> np.ndarray:
    """Count matrix with rows indexed by true class and columns by predicted class."""
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(labels, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {truth.shape} labels")
    if k < 2:
        raise ValueError(f"need at least 2 classes, got k={k}")
    for name, arr in (("prediction", preds), ("label", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} index out of range [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    return counts


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # zero denominator contributes 0
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def macro_metrics(cm: np.ndarray) -> MetricVector:
    cm = np.asarray(cm)
    total = cm.sum()
    if cm.size == 0 or total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(float)
    precision = _safe_ratio(tp, cm.sum(axis=0).astype(float))
    recall = _safe_ratio(tp, cm.sum(axis=1).astype(float))
    f1 = _safe_ratio(2.0 * precision * recall, precision + recall)
    return MetricVector(
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
    )


def confusion_csv(cm: np.ndarray) -> str:
    """Row-major CSV block with a header row of predicted-class indices."""
    k = cm.shape[1]
    lines = ["true\\pred," + ",".join(str(j) for j in range(k))]
    for i, row in enumerate(cm):
        lines.append(f"{i}," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def evaluate_confusion(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    preds = predict(params, features)
    return confusion_matrix(preds, labels, params.layout.output_dim)


def evaluate_model(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> MetricVector:
    """Eval-mode forward pass, argmax, then macro metrics."""
    return macro_metrics(evaluate_confusion(params, features, labels))
