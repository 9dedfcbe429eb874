import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from gbun.dataset import SparseDataset

DATA_DIR = Path(__file__).parent / "data"


def make_sparse_binary(n=2000, m=100, density=0.1, seed=0):
    """Sparse rows labelled by the sign of a random linear score."""
    rng = np.random.default_rng(seed)
    X = sp.random(n, m, density=density, random_state=seed, format="csr")
    y = (X @ rng.normal(size=m) > 0).astype(float)
    return SparseDataset.from_csr(X, y)


def make_separable(n=2000, m=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    y = (X @ rng.normal(size=m) > 0).astype(float)
    return SparseDataset.from_csr(X, y)


def make_multiclass(n=600, m=12, C=4, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=2.0, size=(C, m))
    y = rng.integers(0, C, size=n)
    X = centers[y] + rng.normal(size=(n, m))
    return SparseDataset.from_csr(X, y.astype(float))


@pytest.fixture
def sparse_binary():
    return make_sparse_binary()


@pytest.fixture
def separable():
    return make_separable()


@pytest.fixture
def multiclass():
    return make_multiclass()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
