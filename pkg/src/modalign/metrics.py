"""Classification metrics for the experiment harness."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def confusion_matrix(predictions, truths, n_classes: int) -> np.ndarray:
    """cm[t, p] counts instances of true class t predicted as p."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape:
        raise ParameterError(
            f"length mismatch: {predictions.shape} vs {truths.shape}")
    if len(truths) and (truths.max() >= n_classes or predictions.max() >= n_classes):
        raise ParameterError("label id out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truths, predictions), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class; a class with no TP, FP, and FN contributes 0."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore"):
        f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    return f1


def macro_f1(predictions, truths, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all n_classes classes."""
    return float(per_class_f1(confusion_matrix(predictions, truths, n_classes)).mean())


def aggregate(scores) -> tuple[float, float]:
    """Mean and sample standard deviation; std is 0 for a single score."""
    scores = np.asarray(scores, dtype=np.float64)
    mean = float(scores.mean())
    std = 0.0 if len(scores) < 2 else float(scores.std(ddof=1))
    return mean, std
