"""Classification metrics: accuracy, rank-based ROC AUC, confusion matrix."""

from __future__ import annotations

import numpy as np


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(pred == labels))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    ranks = np.empty(len(x))
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    return ranks


def binary_auc(scores, positive) -> float | None:
    """Mann-Whitney AUC; None when either side is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    r = average_ranks(scores)
    u = r[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(scores, labels, n_classes: int | None = None) -> float | None:
    """Macro one-vs-rest AUC over classes present in ``labels``.

    ``scores`` is (M, C) class scores, or (M,) positive-class scores for two
    classes. Returns None for a single-class label set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        return binary_auc(scores, labels == 1)
    n_classes = scores.shape[1] if n_classes is None else n_classes
    present = np.unique(labels)
    if present.size < 2:
        return None
    if n_classes == 2:
        return binary_auc(scores[:, 1] - scores[:, 0], labels == 1)
    aucs = [binary_auc(scores[:, c], labels == c) for c in present]
    return float(np.mean(aucs))


def confusion(pred, labels, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(pred)), 1)
    return m
