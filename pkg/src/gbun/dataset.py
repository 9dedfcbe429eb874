"""Sparse CSR datasets: libsvm reading/writing, partitioning and batch planning."""

from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class LibsvmParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseDataset:
    """Immutable CSR samples plus one real label per row."""

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    num_features: int

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(self.indptr, np.int64))
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.float64))
        object.__setattr__(self, "num_features", int(self.num_features))
        self._validate()

    def _validate(self):
        indptr, indices = self.indptr, self.indices
        if indptr.ndim != 1 or len(indptr) == 0 or indptr[0] != 0:
            raise ValueError("indptr must be 1-d and start at 0")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if indptr[-1] != len(indices) or len(indices) != len(self.values):
            raise ValueError("indptr[-1], len(indices) and len(values) must agree")
        if len(self.labels) != len(indptr) - 1:
            raise ValueError("labels length must equal the number of rows")
        if len(indices):
            if indices.min() < 0 or indices.max() >= self.num_features:
                raise ValueError("feature index out of range [0, num_features)")
            # strictly increasing within each row: every step that is not a row start must be > 0
            step_ok = np.diff(indices) > 0
            row_start = np.zeros(len(indices), dtype=bool)
            starts = indptr[:-1][np.diff(indptr) > 0]
            row_start[starts] = True
            if np.any(~step_ok & ~row_start[1:]):
                raise ValueError("indices must be strictly increasing within a row")

    @property
    def num_samples(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def __len__(self):
        return self.num_samples

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def density(self) -> float:
        cells = self.num_samples * self.num_features
        return self.nnz / cells if cells else 0.0

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.indices, self.indptr),
            shape=(self.num_samples, self.num_features),
        )

    def slice_rows(self, start: int, stop: int) -> "SparseDataset":
        lo, hi = self.indptr[start], self.indptr[stop]
        return SparseDataset(
            self.indptr[start:stop + 1] - lo,
            self.indices[lo:hi],
            self.values[lo:hi],
            self.labels[start:stop],
            self.num_features,
        )

    def take_rows(self, rows: Sequence[int]) -> "SparseDataset":
        rows = np.asarray(rows, dtype=np.int64)
        counts = self.row_nnz()[rows]
        indptr = np.concatenate([[0], np.cumsum(counts)])
        if len(rows):
            gather = np.concatenate(
                [np.arange(self.indptr[r], self.indptr[r + 1]) for r in rows]
            ).astype(np.int64)
        else:
            gather = np.zeros(0, dtype=np.int64)
        return SparseDataset(
            indptr, self.indices[gather], self.values[gather], self.labels[rows],
            self.num_features,
        )

    def with_num_features(self, m: int) -> "SparseDataset":
        return SparseDataset(self.indptr, self.indices, self.values, self.labels, m)

    @classmethod
    def from_csr(cls, X, labels, num_features: int | None = None) -> "SparseDataset":
        X = sp.csr_matrix(X, dtype=np.float64)
        X.sort_indices()
        X.sum_duplicates()
        m = X.shape[1] if num_features is None else num_features
        return cls(X.indptr, X.indices, X.data, np.asarray(labels, dtype=np.float64), m)

    def equals(self, other: "SparseDataset") -> bool:
        return (
            self.num_features == other.num_features
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
        )


def _parse_float(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise LibsvmParseError(lineno, f"bad {what} {tok!r}") from None


def parse_libsvm(lines: Iterable[str] | str, n_features: int | None = None) -> SparseDataset:
    """Parse ``<label> <idx>:<val> ...`` lines (1-based indices) into a dataset.

    ``n_features`` overrides the feature count inferred from the largest
    index, which keeps train and test files in one feature space.
    """
    if isinstance(lines, str):
        lines = io.StringIO(lines)
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_parse_float(toks[0], lineno, "label"))
        prev = -1
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"malformed feature token {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"bad feature index {idx_s!r}") from None
            if idx < 1:
                raise LibsvmParseError(lineno, f"feature index {idx} must be >= 1")
            idx -= 1
            if idx <= prev:
                raise LibsvmParseError(lineno, "feature indices must be strictly increasing")
            prev = idx
            indices.append(idx)
            values.append(_parse_float(val_s, lineno, "feature value"))
        indptr.append(len(indices))
    seen = max(indices) + 1 if indices else 0
    if n_features is None:
        m = seen
    else:
        if n_features < seen:
            raise ValueError(f"n_features={n_features} but data uses feature {seen}")
        m = n_features
    return SparseDataset(
        np.array(indptr, dtype=np.int64),
        np.array(indices, dtype=np.int64),
        np.array(values, dtype=np.float64),
        np.array(labels, dtype=np.float64),
        m,
    )


def load_libsvm(path, n_features: int | None = None) -> SparseDataset:
    """Read a libsvm file; gzip input is detected from its magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    opener = gzip.open if magic == b"\x1f\x8b" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return parse_libsvm(fh, n_features)


def _fmt(v: float) -> str:
    # shortest text that parses back to the same double
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def dump_libsvm(ds: SparseDataset, out) -> None:
    for i in range(ds.num_samples):
        lo, hi = ds.indptr[i], ds.indptr[i + 1]
        feats = " ".join(
            f"{j + 1}:{_fmt(v)}" for j, v in zip(ds.indices[lo:hi].tolist(), ds.values[lo:hi].tolist())
        )
        label = _fmt(float(ds.labels[i]))
        out.write(f"{label} {feats}\n" if feats else f"{label}\n")


def dumps_libsvm(ds: SparseDataset) -> str:
    buf = io.StringIO()
    dump_libsvm(ds, buf)
    return buf.getvalue()


def partition_rows(n: int, S: int, strategy: str = "contiguous") -> list[np.ndarray]:
    if S < 1:
        raise ValueError("number of partitions must be >= 1")
    if S > n:
        raise ValueError(f"cannot split {n} rows into {S} partitions")
    if strategy == "contiguous":
        return [np.asarray(r, dtype=np.int64) for r in np.array_split(np.arange(n), S)]
    if strategy == "round_robin":
        return [np.arange(s, n, S, dtype=np.int64) for s in range(S)]
    raise ValueError(f"unknown partition strategy {strategy!r}")


def partition(ds: SparseDataset, S: int, strategy: str = "contiguous") -> list[SparseDataset]:
    """Split rows into ``S`` datasets sharing the same feature space."""
    parts = partition_rows(ds.num_samples, S, strategy)
    if strategy == "contiguous":
        return [ds.slice_rows(int(p[0]), int(p[-1]) + 1) for p in parts]
    return [ds.take_rows(p) for p in parts]


@dataclass(frozen=True)
class BatchPlan:
    row_ranges: list[tuple[int, int]]
    nnz_budget: int
    max_rows_per_batch: int

    def __len__(self):
        return len(self.row_ranges)


def _nearest_rank_quantile(x: np.ndarray, q: float) -> int:
    s = np.sort(x)
    rank = max(1, math.ceil(q * len(s)))
    return int(s[rank - 1])


def plan_batches(ds: SparseDataset, num_batches: int) -> BatchPlan:
    """Greedy even-nnz packing of consecutive rows into batches.

    The nnz budget is ``max(largest row, ceil(nnz / num_batches))`` and a batch
    holds at most ``max(ceil(n / num_batches), n // q25)`` rows, where q25 is
    the nearest-rank 25th percentile of row nnz (taken as 1 when it is 0).
    """
    if num_batches < 1:
        raise ValueError("num_batches must be >= 1")
    n = ds.num_samples
    if n == 0:
        return BatchPlan([], 0, 0)
    row_nnz = ds.row_nnz()
    budget = max(int(row_nnz.max()), math.ceil(ds.nnz / num_batches))
    q25 = _nearest_rank_quantile(row_nnz, 0.25) or 1
    max_rows = max(math.ceil(n / num_batches), n // q25, 1)

    ranges = []
    start, acc = 0, 0
    for i, c in enumerate(row_nnz.tolist()):
        if i > start and (acc + c > budget or i - start >= max_rows):
            ranges.append((start, i))
            start, acc = i, 0
        acc += c
    ranges.append((start, n))
    return BatchPlan(ranges, budget, max_rows)


def iter_batches(ds: SparseDataset, plan: BatchPlan):
    for lo, hi in plan.row_ranges:
        yield ds.slice_rows(lo, hi)
