"""Ranking and classification metrics with pinned tie semantics.

auc_roc uses midranks, so a tied positive/negative pair counts one half.
auc_pr is average precision over a descending-score walk; ties keep input
order (stable sort on score, then original index). Micro scores pool
TP/FP/FN over classes, which for single-label prediction equals accuracy.
"""
from __future__ import annotations

import numpy as np


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("metrics: scores and labels must be equal-length 1-d arrays")
    labels = labels.astype(bool)
    return scores, labels


def auc_roc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties = 1/2)."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc: needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Average precision: mean of precision-at-rank over the positives."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("auc_pr: needs at least one positive")
    order = np.argsort(-scores, kind="stable")  # ties keep original index order
    hits = labels[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    return float((tp[hits] / ranks[hits]).sum() / n_pos)


def _pooled_counts(pred_classes, true_classes):
    pred = np.asarray(pred_classes)
    true = np.asarray(true_classes)
    if pred.ndim != 1 or pred.shape != true.shape:
        raise ValueError("metrics: predicted and true class arrays must align")
    classes = np.unique(np.concatenate([pred, true]))
    tp = fp = fn = 0
    for c in classes:
        p = pred == c
        t = true == c
        tp += int(np.sum(p & t))
        fp += int(np.sum(p & ~t))
        fn += int(np.sum(~p & t))
    return tp, fp, fn


def micro_f1(pred_classes, true_classes) -> float:
    tp, fp, fn = _pooled_counts(pred_classes, true_classes)
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def micro_recall(pred_classes, true_classes) -> float:
    tp, _, fn = _pooled_counts(pred_classes, true_classes)
    denom = tp + fn
    return float(tp / denom) if denom else 0.0


def micro_f1_indicator(pred_matrix, true_matrix) -> float:
    """Multi-label micro-F1 over (instance, class) indicator matrices."""
    pred = np.asarray(pred_matrix, dtype=bool)
    true = np.asarray(true_matrix, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError("metrics: indicator matrices must align")
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def micro_recall_indicator(pred_matrix, true_matrix) -> float:
    pred = np.asarray(pred_matrix, dtype=bool)
    true = np.asarray(true_matrix, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError("metrics: indicator matrices must align")
    tp = int(np.sum(pred & true))
    fn = int(np.sum(~pred & true))
    denom = tp + fn
    return float(tp / denom) if denom else 0.0
