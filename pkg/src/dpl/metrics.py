"""Evaluation metrics: macro F1, top-1 accuracy, rank-based AUROC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, ShapeMismatch


@dataclass
class EvalReport:
    metric_name: str
    value: float
    n_samples: int
    per_class: np.ndarray | None = None


def f1_macro(pred, truth) -> EvalReport:
    """Unweighted mean of per-class F1.

    A class with no true positives, false positives or false negatives
    scores 1; any other class without true positives scores 0.
    """
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[0] == 0:
        raise ShapeMismatch(f"need matching (n, K) arrays with n >= 1, got {pred.shape} and {truth.shape}")
    tp = np.sum(pred & truth, axis=0)
    fp = np.sum(pred & ~truth, axis=0)
    fn = np.sum(~pred & truth, axis=0)
    denom = 2 * tp + fp + fn
    # 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
    per_class = np.where(denom == 0, 1.0, 2 * tp / np.maximum(denom, 1))
    return EvalReport("f1_macro", float(per_class.mean()), pred.shape[0], per_class)


def top1_accuracy(pred, truth) -> EvalReport:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ShapeMismatch(f"need matching 1-d arrays with n >= 1, got {pred.shape} and {truth.shape}")
    return EvalReport("accuracy", float(np.mean(pred == truth)), pred.size)


def auroc(scores, truth) -> EvalReport:
    """Mann-Whitney AUROC with midranks, so tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ShapeMismatch(f"need matching 1-d arrays, got {scores.shape} and {truth.shape}")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2
    return EvalReport("auroc", float(u / (n_pos * n_neg)), truth.size)
