"""PR-AUC, precision/recall, R^2, MSE and validation threshold calibration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def pr_auc(scores, labels):
    """Sum over distinct score thresholds of Prec(k) * (Rec(k) - Rec(k-1)).

    Samples sharing a score enter the ranking together as one threshold step.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape or s.size == 0:
        raise ValidationError("scores and labels must be non-empty and equally long")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValidationError("labels contain only the negative class (0)")
    if n_pos == y.size:
        raise ValidationError("labels contain only the positive class (1)")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    predicted = np.arange(1, y.size + 1)[last_of_group]
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(precision * np.diff(np.r_[0.0, recall])))


def macro_pr_auc(probs, labels, n_classes=None):
    """Mean one-vs-rest PR-AUC over classes that have positives and negatives.

    Returns (macro, per_class) where skipped classes are NaN in per_class.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    n_classes = n_classes or p.shape[1]
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        pos = y == c
        if pos.any() and not pos.all():
            per_class[c] = pr_auc(p[:, c], pos)
    if np.all(np.isnan(per_class)):
        raise ValidationError("every class is degenerate in these labels")
    return float(np.nanmean(per_class)), per_class


def r2_score(predicted, actual):
    yhat = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(actual, dtype=np.float64)
    if y.size < 2 or y.shape != yhat.shape:
        raise ValidationError("r2 needs at least two paired values")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise ValidationError("actual values have zero variance")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def mse_score(predicted, actual):
    yhat = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(actual, dtype=np.float64)
    if y.size == 0 or y.shape != yhat.shape:
        raise ValidationError("mse needs non-empty paired values")
    return float(np.mean((y - yhat) ** 2))


@dataclass
class PrecisionRecall:
    precision: np.ndarray
    recall: np.ndarray
    zero_precision: np.ndarray  # True where TP + FP == 0 (precision reported as 0)
    zero_recall: np.ndarray
    macro_precision: float
    macro_recall: float


def precision_recall(predicted, actual, n_classes=5):
    """Per-class TP/(TP+FP) and TP/(TP+FN); macro over classes seen in either vector."""
    pred = np.asarray(predicted).astype(int)
    true = np.asarray(actual).astype(int)
    if pred.size == 0 or pred.shape != true.shape:
        raise ValidationError("precision_recall needs non-empty paired labels")
    prec = np.zeros(n_classes)
    rec = np.zeros(n_classes)
    zp = np.zeros(n_classes, dtype=bool)
    zr = np.zeros(n_classes, dtype=bool)
    for c in range(n_classes):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        if tp + fp:
            prec[c] = tp / (tp + fp)
        else:
            zp[c] = True
        if tp + fn:
            rec[c] = tp / (tp + fn)
        else:
            zr[c] = True
    present = np.isin(np.arange(n_classes), np.union1d(pred, true))
    return PrecisionRecall(prec, rec, zp, zr, float(prec[present].mean()), float(rec[present].mean()))


THRESHOLD_GRID = np.round(np.arange(101) * 0.01, 2)


@dataclass
class Thresholds:
    values: np.ndarray
    fallback: bool  # True -> decisions are plain argmax

    def decide(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        if self.fallback:
            return np.argmax(p, axis=1)
        return np.argmax(p - self.values[None, :], axis=1)


def _best_threshold(scores, positives):
    best_t, best_f1 = None, -1.0
    n_pos = positives.sum()
    for t in THRESHOLD_GRID:
        hit = scores >= t
        tp = np.sum(hit & positives)
        denom = hit.sum() + n_pos
        f1 = 2.0 * tp / denom if denom else 0.0
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return float(best_t)


def calibrate_threshold(probs, labels, n_classes=5):
    """Per-class thresholds maximizing one-vs-rest F1 on a 0.01 grid.

    Independent per-class maximization maximizes the macro-F1.  Ties go to
    the lowest threshold.  Classes with no positives, no negatives or
    constant scores get threshold 1.0; if every class is degenerate (or the
    labels hold a single class) the result falls back to argmax.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if y.size == 0:
        raise ValidationError("validation set is empty")
    values = np.ones(n_classes)
    usable = 0
    for c in range(n_classes):
        pos = y == c
        if not pos.any() or pos.all() or np.ptp(p[:, c]) == 0:
            continue
        values[c] = _best_threshold(p[:, c], pos)
        usable += 1
    if usable == 0 or np.unique(y).size < 2:
        warnings.warn("degenerate validation set; falling back to argmax decisions", RuntimeWarning,
                      stacklevel=2)
        return Thresholds(values, fallback=True)
    return Thresholds(values, fallback=False)
