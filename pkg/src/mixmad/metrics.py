"""Ranking-quality metrics for anomaly scores (higher score = more anomalous)."""

import math

import numpy as np
from scipy.stats import rankdata


def _pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    return scores, labels


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum; ties count 1/2."""
    scores, labels = _pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ndcg_at_t(scores, labels, t: int = 20) -> float:
    """NDCG@T with binary gains and log2(rank + 1) discount.

    Instances are ordered by descending score; equal scores keep input order.
    Returns 0.0 when there are no positives.
    """
    scores, labels = _pair(scores, labels)
    if t < 1:
        raise ValueError("T must be >= 1")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")[:t]
    dcg = math.fsum(1.0 / math.log2(pos + 2) for pos, i in enumerate(order) if labels[i])
    ideal = math.fsum(1.0 / math.log2(pos + 2) for pos in range(min(t, n_pos)))
    return dcg / ideal


def f_score(predicted, labels) -> float:
    """F1 of boolean predictions; 0.0 when precision + recall is 0."""
    predicted = np.asarray(predicted, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if predicted.shape != labels.shape:
        raise ValueError("predicted and labels must have equal length")
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)
