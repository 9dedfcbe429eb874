import gzip
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbun.dataset import (
    LibsvmParseError,
    SparseDataset,
    dump_libsvm,
    dumps_libsvm,
    load_libsvm,
    parse_libsvm,
    partition,
    plan_batches,
)


def ds_from_row_nnz(row_nnz):
    indptr = np.concatenate([[0], np.cumsum(row_nnz)]).astype(np.int64)
    indices = np.concatenate([np.arange(k) for k in row_nnz]) if sum(row_nnz) else []
    return SparseDataset(indptr, indices, np.ones(int(indptr[-1])), np.zeros(len(row_nnz)),
                         max(row_nnz) if row_nnz else 0)


def test_parse_basic():
    ds = parse_libsvm("1 3:0.5 7:1.0\n0 1:2.0")
    assert ds.num_samples == 2 and ds.nnz == 3
    assert ds.labels.tolist() == [1.0, 0.0]
    assert ds.indices[ds.indptr[0]:ds.indptr[1]].tolist() == [2, 6]
    assert ds.num_features == 7


def test_parse_empty():
    ds = parse_libsvm("")
    assert (ds.num_samples, ds.nnz, ds.num_features) == (0, 0, 0)
    assert parse_libsvm("", n_features=5).num_features == 5


def test_parse_override_and_blank_lines():
    ds = parse_libsvm("\n1 2:1\n\n-1\n", n_features=10)
    assert ds.num_features == 10
    assert ds.row_nnz().tolist() == [1, 0]
    with pytest.raises(ValueError):
        parse_libsvm("1 20:1", n_features=10)


@pytest.mark.parametrize("text, lineno", [
    ("1 2:1 2:1", 1),
    ("1 3:1 2:1", 1),
    ("1 1:1\n0 x:1", 2),
    ("1 1:1\n0 2:abc", 2),
    ("1 1:1\n1 1:1\nzz 1:1", 3),
    ("1 0:1", 1),
    ("1 5", 1),
])
def test_parse_errors_carry_line_number(text, lineno):
    with pytest.raises(LibsvmParseError) as exc:
        parse_libsvm(text)
    assert exc.value.lineno == lineno
    assert f"line {lineno}" in str(exc.value)


def test_gzip_detected_by_magic(tmp_path):
    text = "1 3:0.5 7:1.0\n0 1:2.0\n"
    plain, packed = tmp_path / "a.txt", tmp_path / "b.txt"
    plain.write_text(text)
    packed.write_bytes(gzip.compress(text.encode()))
    assert load_libsvm(plain).equals(load_libsvm(packed))


def test_invariants_rejected():
    with pytest.raises(ValueError):
        SparseDataset([0, 2], [1, 1], [1.0, 1.0], [0.0], 3)
    with pytest.raises(ValueError):
        SparseDataset([0, 1], [3], [1.0], [0.0], 3)
    with pytest.raises(ValueError):
        SparseDataset([0, 1], [0], [1.0], [0.0, 1.0], 3)
    # a decrease across a row boundary is fine
    SparseDataset([0, 1, 2], [2, 0], [1.0, 1.0], [0.0, 1.0], 3)


def test_dataset_is_read_only():
    ds = parse_libsvm("1 1:1")
    with pytest.raises(ValueError):
        ds.values[0] = 5.0


rows = st.lists(
    st.tuples(
        st.one_of(st.integers(-3, 3), st.floats(-1e6, 1e6, allow_nan=False)),
        st.dictionaries(st.integers(1, 40),
                        st.floats(allow_nan=False, allow_infinity=False, width=64),
                        max_size=6),
    ),
    max_size=12,
)


def _render(rows):
    out = []
    for label, feats in rows:
        out.append(" ".join([repr(label)] + [f"{k}:{v!r}" for k, v in sorted(feats.items())]))
    return "\n".join(out)


@settings(max_examples=60, deadline=None)
@given(rows)
def test_roundtrip(rows):
    ds = parse_libsvm(_render(rows))
    again = parse_libsvm(dumps_libsvm(ds), n_features=ds.num_features)
    assert again.equals(ds)


def test_dump_to_stream():
    ds = parse_libsvm("1 3:0.1 7:1e-300\n0")
    buf = io.StringIO()
    dump_libsvm(ds, buf)
    assert buf.getvalue() == "1 3:0.1 7:1e-300\n0\n"


def test_partition_contiguous():
    ds = parse_libsvm("0 1:1\n1 2:1\n2 3:1\n3 4:1")
    a, b = partition(ds, 2)
    assert a.labels.tolist() == [0, 1] and b.labels.tolist() == [2, 3]
    assert a.num_features == b.num_features == 4


def test_partition_identity():
    ds = parse_libsvm("0 1:1\n1 2:1\n2 3:1\n3 4:1")
    (only,) = partition(ds, 1)
    assert only.equals(ds)


def test_partition_round_robin():
    ds = parse_libsvm("0 1:1\n1 2:1\n2 3:1\n3 4:1\n4 5:1")
    a, b = partition(ds, 2, "round_robin")
    assert a.labels.tolist() == [0, 2, 4] and b.labels.tolist() == [1, 3]
    assert a.indices.tolist() == [0, 2, 4]


def test_partition_errors():
    ds = parse_libsvm("0 1:1\n1 2:1")
    with pytest.raises(ValueError):
        partition(ds, 3)
    with pytest.raises(ValueError):
        partition(ds, 0)
    with pytest.raises(ValueError):
        partition(ds, 1, "shuffled")


@settings(max_examples=40, deadline=None)
@given(rows.filter(lambda r: len(r) >= 1), st.integers(1, 12),
       st.sampled_from(["contiguous", "round_robin"]))
def test_partition_completeness(rows, S, strategy):
    ds = parse_libsvm(_render(rows))
    S = min(S, ds.num_samples)
    parts = partition(ds, S, strategy)
    labels = np.concatenate([p.labels for p in parts])
    assert sorted(labels.tolist()) == sorted(ds.labels.tolist())
    assert sum(p.nnz for p in parts) == ds.nnz


def test_plan_even_rows():
    plan = plan_batches(ds_from_row_nnz([2, 2, 2, 2]), 2)
    assert plan.nnz_budget == 4
    assert plan.row_ranges == [(0, 2), (2, 4)]


def test_plan_heavy_row_starts_batch():
    plan = plan_batches(ds_from_row_nnz([10, 1, 1]), 3)
    assert plan.nnz_budget == 10
    assert plan.row_ranges[0] == (0, 1)
    assert plan.row_ranges[1][0] == 1


def test_plan_single_batch():
    plan = plan_batches(ds_from_row_nnz([2, 2, 2, 2]), 1)
    assert plan.row_ranges == [(0, 4)]


def test_plan_empty_rows_and_empty_dataset():
    plan = plan_batches(ds_from_row_nnz([0, 0, 3, 0]), 2)
    assert plan.row_ranges[0][0] == 0 and plan.row_ranges[-1][1] == 4
    assert plan_batches(parse_libsvm(""), 3).row_ranges == []
    with pytest.raises(ValueError):
        plan_batches(ds_from_row_nnz([1]), 0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=60), st.integers(1, 20))
def test_plan_cover(row_nnz, num_batches):
    ds = ds_from_row_nnz(row_nnz)
    plan = plan_batches(ds, num_batches)
    covered = [i for lo, hi in plan.row_ranges for i in range(lo, hi)]
    assert covered == list(range(len(row_nnz)))
    nnz = [sum(row_nnz[lo:hi]) for lo, hi in plan.row_ranges]
    assert sum(nnz) == ds.nnz
    for (lo, hi), k in zip(plan.row_ranges, nnz):
        assert k <= plan.nnz_budget or hi - lo == 1
        assert hi - lo <= plan.max_rows_per_batch
