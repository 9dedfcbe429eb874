"""Evaluation metrics: AUC, per-class mean average precision, logloss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

EPS = 1e-15


@dataclass(frozen=True)
class EvalResult:
    metric: str
    value: float
    n: int

    def __str__(self):
        return f"{self.metric}={self.value:.6f}"


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("AUC labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, relevant) -> float:
    """AP of one ranking; equal scores keep sample-index order."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(relevant, dtype=bool)[order]
    if not hits.any():
        raise ValueError("average precision needs at least one relevant sample")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(probs, labels) -> float:
    """One-vs-rest AP per class, averaged over classes present in ``labels``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("mean_average_precision needs a non-empty n x C matrix")
    if len(labels) != probs.shape[0]:
        raise ValueError("probs and labels differ in length")
    ids = labels.astype(np.int64)
    if np.any(ids != labels) or np.any((ids < 0) | (ids >= probs.shape[1])):
        raise ValueError(f"labels must be class ids in [0, {probs.shape[1]})")
    aps = [average_precision(probs[:, c], ids == c) for c in np.unique(ids)]
    return float(np.mean(aps))


def logloss(probs, labels) -> float:
    """Mean negative log-likelihood.

    A 1-d ``probs`` is read as P(y=1) for 0/1 labels; a 2-d one as class
    probabilities indexed by integer labels.
    """
    probs = np.clip(np.asarray(probs, dtype=np.float64), EPS, 1 - EPS)
    labels = np.asarray(labels)
    if probs.ndim == 1:
        y = labels.astype(np.float64)
        return float(-np.mean(y * np.log(probs) + (1 - y) * np.log1p(-probs)))
    ids = labels.astype(np.int64)
    return float(-np.mean(np.log(probs[np.arange(len(ids)), ids])))


METRICS = {"auc": auc, "map": mean_average_precision, "logloss": logloss}


def evaluate(metric: str, preds, labels) -> EvalResult:
    try:
        fn = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None
    preds = np.asarray(preds, dtype=np.float64)
    if metric == "auc":
        if preds.ndim == 2:
            if preds.shape[1] != 1:
                raise ValueError("auc expects a single score column")
            preds = preds[:, 0]
    elif metric == "map" and preds.ndim != 2:
        raise ValueError("map expects one probability column per class")
    elif metric == "logloss" and preds.ndim == 2 and preds.shape[1] == 1:
        preds = preds[:, 0]
    return EvalResult(metric, fn(preds, labels), len(labels))
