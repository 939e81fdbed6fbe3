"""Evaluation metrics and output-confidence diagnostics."""

from __future__ import annotations

import numpy as np
from scipy.stats import spearmanr

from kdlab.errors import InputError

METRIC_KINDS = ("accuracy", "f1", "spearman")


def accuracy(predictions, golds) -> float:
    predictions, golds = _paired(predictions, golds)
    return float(np.mean(predictions == golds))


def f1_binary(predictions, golds) -> float:
    """F1 of the positive class (label 1) for binary labels."""
    predictions, golds = _paired(predictions, golds)
    values = set(np.unique(predictions)) | set(np.unique(golds))
    if not values <= {0, 1}:
        raise InputError(f"binary F1 needs labels in {{0, 1}}, saw {sorted(values)}")
    tp = float(np.sum((predictions == 1) & (golds == 1)))
    fp = float(np.sum((predictions == 1) & (golds == 0)))
    fn = float(np.sum((predictions == 0) & (golds == 1)))
    if tp == 0.0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def spearman(predictions, golds) -> float:
    """Rank correlation with average-rank tie handling."""
    predictions, golds = _paired(predictions, golds)
    rho = spearmanr(predictions, golds).statistic
    return float(rho)


def metric(kind: str, predictions, golds) -> float:
    if kind == "accuracy":
        return accuracy(predictions, golds)
    if kind == "f1":
        return f1_binary(predictions, golds)
    if kind == "spearman":
        return spearman(predictions, golds)
    raise InputError(f"unknown metric kind {kind!r}")


def _paired(predictions, golds):
    predictions = np.asarray(predictions)
    golds = np.asarray(golds)
    if predictions.shape != golds.shape:
        raise InputError(
            f"prediction/gold shapes differ: {predictions.shape} vs {golds.shape}"
        )
    if predictions.size == 0:
        raise InputError("empty prediction list")
    return predictions, golds


# ---------------------------------------------------------------------------
# confidence measures over output distributions


def _check_simplex(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    sums = probs.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= 1e-9):
        raise InputError("probabilities must sum to 1 within 1e-9")
    return probs


def variance_confidence(probs) -> float | np.ndarray:
    """Sum-form distribution variance sum_i (y_i - mean)^2.

    Minimized (0) at the uniform distribution, maximized at one-hot.
    Accepts a trailing class axis; leading axes are preserved.
    """
    probs = _check_simplex(probs)
    mean = probs.mean(axis=-1, keepdims=True)
    v = ((probs - mean) ** 2).sum(axis=-1)
    return float(v) if v.ndim == 0 else v


def neg_entropy(probs) -> float | np.ndarray:
    """sum_i y_i log y_i with 0 log 0 = 0."""
    probs = _check_simplex(probs)
    terms = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h
