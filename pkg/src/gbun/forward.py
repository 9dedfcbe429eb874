"""Forward pass of one untrained network: raw outputs, normalization, softmax."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import hashwgen
from .dataset import SparseDataset
from .hashwgen import WeightMode

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class UntrainedNetSpec:
    """Everything needed to regenerate round ``round_t``'s network."""

    round_t: int
    K: int
    m: int
    mode: WeightMode

    @property
    def dense_seed(self) -> int:
        return self.mode.dense_seed + self.round_t

    @cached_property
    def dense_weights(self) -> np.ndarray:
        return hashwgen.gen_dense_weights(
            self.dense_seed, self.m, self.K, self.mode.sparsify_fraction
        )


def _as_csr(X) -> sp.csr_matrix:
    if isinstance(X, SparseDataset):
        return X.to_csr()
    return sp.csr_matrix(X)


def forward_raw(X, net: UntrainedNetSpec) -> np.ndarray:
    """Raw network outputs ``Z`` of shape ``(rows, K)``.

    In hashed mode each distinct feature of ``X`` has its ``K`` weights
    synthesized once, then rows are accumulated in stored index order, so a
    row's output does not depend on which other rows share the batch.
    """
    X = _as_csr(X)
    n = X.shape[0]
    if net.mode.hashed:
        if X.nnz == 0:
            return np.zeros((n, net.K))
        uniq, local = np.unique(X.indices, return_inverse=True)
        W = hashwgen.feature_weights(uniq, net.round_t, net.K)
        Xc = sp.csr_matrix((X.data, local.reshape(-1), X.indptr), shape=(n, len(uniq)))
        return np.asarray(Xc @ W)
    if X.nnz and X.indices.max() >= net.m:
        raise ValueError(
            f"feature id {int(X.indices.max())} outside dense network input size {net.m}"
        )
    if X.shape[1] != net.m:
        X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(n, net.m))
    return np.asarray(X @ net.dense_weights)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    count: int

    @classmethod
    def from_sums(cls, a, b, n) -> "NormStats":
        """Finish the statistics from column sums, sums of squares and count."""
        n = int(round(float(n)))
        if n < 2:
            raise ValueError("normalization needs at least 2 samples")
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        mean = a / n
        var = (b - n * mean * mean) / (n - 1)
        std = np.sqrt(np.maximum(var, STD_FLOOR * STD_FLOOR))
        return cls(mean, std, n)


def norm_sums(Z: np.ndarray):
    """Per-neuron ``(sum z, sum z**2, n)`` for one partition."""
    Z = np.asarray(Z, dtype=np.float64)
    return Z.sum(axis=0), np.einsum("ij,ij->j", Z, Z), Z.shape[0]


def fit_norm(Z: np.ndarray) -> NormStats:
    return NormStats.from_sums(*norm_sums(Z))


def apply_norm(Z: np.ndarray, stats: NormStats) -> np.ndarray:
    return (Z - stats.mean) / stats.std


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise ValueError("softmax input contains non-finite values")
    if Z.shape[0] == 0:
        return Z.copy()
    E =np.exp(Z - Z.max(axis=1, keepdims=True))
    E /= E.sum(axis=1, keepdims=True)
    return E


def assignments(Z: np.ndarray, stats: NormStats) -> np.ndarray:
    """``P = softmax(norm(Z))`` with fixed statistics."""
    return softmax_rows(apply_norm(Z, stats))
