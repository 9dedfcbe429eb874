"""scikit-learn compatible wrappers around :func:`gbun.booster.train`."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .booster import TrainConfig, predict, train
from .dataset import SparseDataset


def _to_dataset(X, y=None, num_features=None) -> SparseDataset:
    X = sp.csr_matrix(X, dtype=np.float64)
    X.eliminate_zeros()
    labels = np.zeros(X.shape[0]) if y is None else y
    return SparseDataset.from_csr(X, labels, num_features)


class _GBUNBase(BaseEstimator):
    _objective = ""

    def __init__(self, n_neurons=64, n_rounds=300, learning_rate=0.1, reg_lambda=1.0,
                 weight_mode="auto", sparsify_fraction=0.9, random_state=0,
                 n_partitions=1, transport="inprocess", n_batches=1):
        self.n_neurons = n_neurons
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.weight_mode = weight_mode
        self.sparsify_fraction = sparsify_fraction
        self.random_state = random_state
        self.n_partitions = n_partitions
        self.transport = transport
        self.n_batches = n_batches

    def _config(self, objective, num_classes=None) -> TrainConfig:
        return TrainConfig(
            objective=objective, K=self.n_neurons, rounds=self.n_rounds,
            eta=self.learning_rate, lam=self.reg_lambda, mode=self.weight_mode,
            seed=self.random_state, sparsify_fraction=self.sparsify_fraction,
            num_classes=num_classes, partitions=self.n_partitions,
            transport="none" if self.n_partitions == 1 else self.transport,
            batches=self.n_batches, eval_every=0,
        ).validate()

    def _fit(self, X, y, objective, num_classes=None):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=np.float64)
        ds = _to_dataset(X, y)
        self.booster_ = train(self._config(objective, num_classes), ds)
        self.n_features_in_ = X.shape[1]
        return self

    def _raw(self, X):
        check_is_fitted(self, "booster_")
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} was fitted "
                f"with {self.n_features_in_}"
            )
        return predict(self.booster_, _to_dataset(X, num_features=self.n_features_in_))


class GBUNClassifier(ClassifierMixin, _GBUNBase):
    """Binary (logistic) or multi-class (softmax) classifier.

    Any label values work; they are mapped to ``0..n_classes-1`` internally and
    exposed as ``classes_``.
    """

    def fit(self, X, y):
        check_classification_targets(y)
        self.classes_, codes = np.unique(np.asarray(y), return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if len(self.classes_) == 2:
            return self._fit(X, codes, "binary:logistic")
        return self._fit(X, codes, "multi:softmax", len(self.classes_))

    def decision_function(self, X):
        raw = self._raw(X)
        return raw[:, 0] if raw.shape[1] == 1 else raw

    def predict_proba(self, X):
        raw = self._raw(X)
        if raw.shape[1] == 1:
            p = 1.0 / (1.0 + np.exp(-raw[:, 0]))
            return np.column_stack([1.0 - p, p])
        e = np.exp(raw - raw.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "booster_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class GBUNRegressor(RegressorMixin, _GBUNBase):
    """Squared-error regressor."""

    def fit(self, X, y):
        return self._fit(X, y, "reg:squared")

    def predict(self, X):
        return self._raw(X)[:, 0]
