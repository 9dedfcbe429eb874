import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from gbun import GBUNClassifier, GBUNRegressor


@pytest.fixture
def xy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 8))
    y = np.where(X @ rng.normal(size=8) > 0, "yes", "no")
    return X, y


def test_get_params_and_clone():
    est = GBUNClassifier(n_neurons=8, n_rounds=3)
    params = est.get_params()
    assert params["n_neurons"] == 8 and params["reg_lambda"] == 1.0
    c = clone(est)
    assert c.get_params() == params and c is not est
    est.set_params(learning_rate=0.3)
    assert est.learning_rate == 0.3


def test_classifier_fit_predict(xy):
    X, y = xy
    clf = GBUNClassifier(n_neurons=16, n_rounds=20, learning_rate=0.3).fit(X, y)
    assert list(clf.classes_) == ["no", "yes"]
    proba = clf.predict_proba(X)
    assert proba.shape == (300, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.score(X, y) > 0.85
    assert clf.decision_function(X).shape == (300,)


def test_sparse_input_matches_dense(xy):
    X, y = xy
    a = GBUNClassifier(n_neurons=8, n_rounds=3, weight_mode="hashed").fit(X, y)
    b = GBUNClassifier(n_neurons=8, n_rounds=3, weight_mode="hashed").fit(sp.csr_matrix(X), y)
    assert np.array_equal(a.decision_function(X), b.decision_function(sp.csr_matrix(X)))


def test_multiclass():
    rng = np.random.default_rng(1)
    centers = rng.normal(scale=3, size=(3, 5))
    y = rng.integers(0, 3, size=240)
    X = centers[y] + rng.normal(size=(240, 5))
    clf = GBUNClassifier(n_neurons=16, n_rounds=15, learning_rate=0.3).fit(X, y + 10)
    assert list(clf.classes_) == [10, 11, 12]
    assert clf.predict_proba(X).shape == (240, 3)
    assert clf.score(X, y + 10) > 0.9


def test_partitions_match_single(xy):
    X, y = xy
    a = GBUNClassifier(n_neurons=8, n_rounds=4).fit(X, y)
    b = GBUNClassifier(n_neurons=8, n_rounds=4, n_partitions=3).fit(X, y)
    assert np.abs(a.decision_function(X) - b.decision_function(X)).max() < 1e-9


def test_regressor():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 4))
    y = X[:, 0] - 2 * X[:, 1]
    reg = GBUNRegressor(n_neurons=32, n_rounds=40, learning_rate=0.3).fit(X, y)
    assert reg.score(X, y) > 0.8


def test_cross_val_score_runs(xy):
    X, y = xy
    scores = cross_val_score(GBUNClassifier(n_neurons=8, n_rounds=5), X, y, cv=3)
    assert len(scores) == 3


def test_errors(xy):
    X, y = xy
    with pytest.raises(NotFittedError):
        GBUNClassifier().predict(X)
    clf = GBUNClassifier(n_neurons=4, n_rounds=1).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :3])
    with pytest.raises(ValueError):
        GBUNClassifier().fit(X, np.zeros(len(X)))
    with pytest.raises(ValueError):
        GBUNClassifier(n_neurons=1).fit(X, y)
