import struct

import numpy as np
import pytest
import xxhash
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from gbun.hashwgen import (
    MASK1,
    MASK2,
    WeightMode,
    bits_to_unit_float,
    feature_weight,
    feature_weights,
    gen_dense_weights,
    unit_to_signed,
    xxh32_feature_round,
)


def reference_weight(f, t, j):
    """Independent route: reference xxHash32 plus struct-level IEEE decoding."""
    h = xxhash.xxh32_intdigest(struct.pack("<QI", f, t), seed=j)
    u = struct.unpack("<f", struct.pack("<I", (h & 0x3FFFFFFF) | 0x3F800000))[0]
    return 2.0 * u - 3.0


def test_masks_are_the_binary_patterns():
    assert MASK1 == int("00111111111111111111111111111111", 2)
    assert MASK2 == int("00111111100000000000000000000000", 2)


@pytest.mark.parametrize("bits, expected", [
    (0x00000000, 1.0),
    (0x3FC00000, 1.5),
    (0xFFFFFFFF, 1.0 + (2**23 - 1) / 2**23),
])
def test_bits_to_unit_float(bits, expected):
    assert bits_to_unit_float(np.uint32(bits)) == expected


def test_bits_to_unit_float_range_on_random_patterns():
    rng = np.random.default_rng(1)
    u = bits_to_unit_float(rng.integers(0, 2**32, size=10**6, dtype=np.uint64).astype(np.uint32))
    assert u.min() >= 1.0 and u.max() < 2.0


@pytest.mark.parametrize("u, expected", [(1.0, -1.0), (1.5, 0.0), (1.75, 0.5)])
def test_unit_to_signed(u, expected):
    assert unit_to_signed(u) == expected


@pytest.mark.parametrize("u", [0.999, 2.0, -1.0])
def test_unit_to_signed_rejects_out_of_range(u):
    with pytest.raises(ValueError):
        unit_to_signed(u)


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_xxh32_matches_reference(f, t, seed):
    expected = xxhash.xxh32_intdigest(struct.pack("<QI", f, t), seed=seed)
    assert int(xxh32_feature_round([f], t, [seed])[0, 0]) == expected


@given(st.integers(0, 2**63), st.integers(0, 10**6), st.integers(0, 1023))
def test_feature_weight_matches_reference(f, t, j):
    assert feature_weight(f, t, j) == reference_weight(f, t, j)


def test_feature_weights_matrix_matches_scalar():
    W = feature_weights([0, 5, 99], 3, 8)
    assert W.shape == (3, 8)
    for a, f in enumerate([0, 5, 99]):
        for j in range(8):
            assert W[a, j] == feature_weight(f, 3, j)


def test_feature_weight_is_deterministic():
    assert feature_weight(123, 7, 3) == feature_weight(123, 7, 3)


def test_neurons_give_different_weights():
    f = np.arange(1, 1001)
    W = feature_weights(f, 0, 2)
    assert np.mean(W[:, 0] == W[:, 1]) < 0.01


def test_rounds_give_different_weights():
    f = np.arange(1, 1001)
    assert np.mean(feature_weights(f, 1, 1) == feature_weights(f, 2, 1)) < 0.01


def test_uniformity_chi_square_and_ks():
    w = feature_weights(np.arange(1, 10001), 0, 1)[:, 0]
    counts, _ = np.histogram(w, bins=100, range=(-1.0, 1.0))
    assert stats.chisquare(counts).pvalue > 0.01
    assert stats.kstest(w, stats.uniform(loc=-1, scale=2).cdf).statistic < 0.02


def test_dense_sparsify_exact_count():
    W = gen_dense_weights(0, 10, 10, 0.9)
    assert np.count_nonzero(W == 0.0) == 90


def test_dense_no_sparsify():
    W = gen_dense_weights(3, 40, 16, 0.0)
    assert np.all(W != 0.0)
    assert W.min() >= -1.0 and W.max() < 1.0


def test_dense_deterministic_and_seed_sensitive():
    a, b = gen_dense_weights(7, 30, 20, 0.5), gen_dense_weights(7, 30, 20, 0.5)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gen_dense_weights(8, 30, 20, 0.5))


@pytest.mark.parametrize("args", [(0, 0, 4, 0.1), (0, 4, 0, 0.1), (0, 4, 4, 1.0), (0, 4, 4, -0.1)])
def test_dense_bad_arguments(args):
    with pytest.raises(ValueError):
        gen_dense_weights(*args)


def test_weight_mode_roundtrip():
    for mode in (WeightMode("hashed"), WeightMode("dense", 5, 0.25)):
        assert WeightMode.from_dict(mode.to_dict()) == mode
    with pytest.raises(ValueError):
        WeightMode("gaussian")
