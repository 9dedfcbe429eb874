"""Losses with their first and second derivatives w.r.t. the raw score.

Every objective works on score matrices of shape ``(n, C)``; binary and
regression objectives use ``C = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax


@dataclass
class GradHess:
    g: np.ndarray
    h: np.ndarray


def logistic_grad_hess(yhat, y) -> GradHess:
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("binary:logistic labels must be 0 or 1")
    p = expit(yhat)
    return GradHess(p - y, p * (1.0 - p))


def squared_grad_hess(yhat, y) -> GradHess:
    yhat = np.asarray(yhat, dtype=np.float64)
    return GradHess(yhat - np.asarray(y, dtype=np.float64), np.ones_like(yhat))


def _class_ids(y, C: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    ids = y.astype(np.int64)
    if np.any(ids != y) or np.any((ids < 0) | (ids >= C)):
        raise ValueError(f"multi:softmax labels must be integers in [0, {C})")
    return ids


def softmax_grad_hess(Yhat, y) -> GradHess:
    """Diagonal second-order approximation of multi-class cross-entropy."""
    Yhat = np.asarray(Yhat, dtype=np.float64)
    C = Yhat.shape[1]
    if C < 2:
        raise ValueError("multi:softmax needs at least 2 classes")
    ids = _class_ids(y, C)
    q = softmax(Yhat, axis=1)
    g = q.copy()
    g[np.arange(len(ids)), ids] -= 1.0
    return GradHess(g, q * (1.0 - q))


class Objective:
    name: str
    multiclass = False

    def n_outputs(self, num_classes: int) -> int:
        return 1

    def grad_hess(self, scores, y) -> GradHess:
        raise NotImplementedError

    def loss_sum(self, scores, y) -> float:
        raise NotImplementedError

    def check_labels(self, y, num_classes: int = 1):
        pass


class BinaryLogistic(Objective):
    name = "binary:logistic"

    def grad_hess(self, scores, y):
        gh = logistic_grad_hess(scores[:, 0], y)
        return GradHess(gh.g[:, None], gh.h[:, None])

    def loss_sum(self, scores, y):
        s = scores[:, 0]
        y = np.asarray(y, dtype=np.float64)
        # log(1 + exp(s)) - y*s, stable for large |s|
        return float(np.sum(np.logaddexp(0.0, s) - y * s))

    def check_labels(self, y, num_classes=1):
        logistic_grad_hess(np.zeros(len(y)), y)

    def transform(self, scores):
        return expit(scores[:, 0])


class SquaredError(Objective):
    name = "reg:squared"

    def grad_hess(self, scores, y):
        gh = squared_grad_hess(scores[:, 0], y)
        return GradHess(gh.g[:, None], gh.h[:, None])

    def loss_sum(self, scores, y):
        return float(0.5 * np.sum((scores[:, 0] - np.asarray(y, dtype=np.float64)) ** 2))

    def transform(self, scores):
        return scores[:, 0].copy()


class MultiSoftmax(Objective):
    name = "multi:softmax"
    multiclass = True

    def n_outputs(self, num_classes):
        return num_classes

    def grad_hess(self, scores, y):
        return softmax_grad_hess(scores, y)

    def loss_sum(self, scores, y):
        ids = _class_ids(y, scores.shape[1])
        return float(-np.sum(log_softmax(scores, axis=1)[np.arange(len(ids)), ids]))

    def check_labels(self, y, num_classes=1):
        _class_ids(y, num_classes)

    def transform(self, scores):
        return softmax(scores, axis=1)


OBJECTIVES = {cls.name: cls for cls in (BinaryLogistic, MultiSoftmax, SquaredError)}


def get_objective(name: str) -> Objective:
    try:
        return OBJECTIVES[name]()
    except KeyError:
        raise ValueError(
            f"unknown objective {name!r}; choose from {sorted(OBJECTIVES)}"
        ) from None
