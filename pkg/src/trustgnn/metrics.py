"""Evaluation metrics for multi-class trust prediction.

MAE follows the conventional categorical-to-scalar trust mapping
{observer: 0.1, apprentice: 0.4, journeyer: 0.7, master: 0.9} and is computed
on the argmax class, not the expectation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCALAR_MAP = (0.1, 0.4, 0.7, 0.9)


@dataclass
class Metrics:
    micro_f1: float
    mae: float
    per_class_f1: list[float]
    loss_history: list[float] = field(default_factory=list)
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "mae": self.mae,
            "per_class_f1": self.per_class_f1,
            "loss_history": self.loss_history,
            "runtime": self.runtime,
        }


@dataclass
class EvalRecord:
    """Ground truth and predictions for one evaluated edge set."""

    y_true: np.ndarray
    y_pred: np.ndarray
    scalar_map: tuple[float, ...] = SCALAR_MAP


def micro_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    """Micro-averaged F1 from global TP/FP/FN counts.

    For single-label multi-class predictions this equals plain accuracy, but
    it is computed from the counts so the identity stays checkable.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label shapes differ: {y_true.shape} vs {y_pred.shape}")
    tp = fp = fn = 0
    for c in range(num_classes):
        tp += int(np.sum((y_pred == c) & (y_true == c)))
        fp += int(np.sum((y_pred == c) & (y_true != c)))
        fn += int(np.sum((y_pred != c) & (y_true == c)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def per_class_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> list[float]:
    out = []
    for c in range(num_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        out.append(2.0 * tp / denom if denom else 0.0)
    return out


def mae(y_true: np.ndarray, y_pred: np.ndarray,
        scalar_map: tuple[float, ...] = SCALAR_MAP) -> float:
    """Mean absolute error after mapping class ids to scalar trust values."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size and (y_true.max() >= len(scalar_map) or y_pred.max() >= len(scalar_map)):
        raise ValueError(f"class id outside the {len(scalar_map)}-entry scalar map")
    table = np.asarray(scalar_map, dtype=np.float64)
    return float(np.mean(np.abs(table[y_pred] - table[y_true])))


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> Metrics:
    return Metrics(
        micro_f1=micro_f1(y_true, y_pred, num_classes),
        mae=mae(y_true, y_pred) if num_classes <= len(SCALAR_MAP) else float("nan"),
        per_class_f1=per_class_f1(y_true, y_pred, num_classes),
    )


def format_pct(mean: float, std: float) -> str:
    """Table-style cell like '74.4%±0.1%'."""
    return f"{100.0 * mean:.1f}%±{100.0 * std:.1f}%"
