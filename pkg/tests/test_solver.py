import numpy as np
import pytest

from gbun.solver import SolverError, accumulate_AB, quadratic_objective, solve_weights


def test_accumulate_single_term():
    A, B = accumulate_AB([[1.0, 0.0]], [2.0], [3.0])
    assert A.tolist() == [[3.0, 0.0], [0.0, 0.0]]
    assert B.tolist() == [2.0, 0.0]


def test_accumulate_split_row():
    A, B = accumulate_AB([[0.5, 0.5]], [2.0], [4.0])
    assert A.tolist() == [[1.0, 1.0], [1.0, 1.0]]
    assert B.tolist() == [1.0, 1.0]


def test_accumulate_rejects_bad_input():
    with pytest.raises(ValueError):
        accumulate_AB(np.ones((2, 3)), [1.0], [1.0])
    with pytest.raises(ValueError):
        accumulate_AB(np.ones((1, 3)), [1.0], [-1.0])


def test_accumulate_is_symmetric_psd():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(8), size=100)
    A, B = accumulate_AB(P, rng.normal(size=100), rng.uniform(0, 1, size=100))
    assert np.array_equal(A, A.T)
    assert np.linalg.eigvalsh(A).min() > -1e-12


@pytest.mark.parametrize("splits", [[50], [17, 60], [1, 2, 3, 99]])
def test_accumulate_partition_additivity(splits):
    rng = np.random.default_rng(len(splits))
    P = rng.dirichlet(np.ones(6), size=120)
    g, h = rng.normal(size=120), rng.uniform(0, 1, size=120)
    A, B = accumulate_AB(P, g, h)
    parts = [accumulate_AB(P[s], g[s], h[s]) for s in np.split(np.arange(120), splits)]
    np.testing.assert_allclose(sum(p[0] for p in parts), A, rtol=0, atol=1e-12)
    np.testing.assert_allclose(sum(p[1] for p in parts), B, rtol=0, atol=1e-12)


def test_one_hot_example():
    A, B = accumulate_AB([[1.0, 0.0], [0.0, 1.0]], [1.0, -1.0], [1.0, 1.0])
    np.testing.assert_allclose(solve_weights(A, B, 1.0), [-0.5, 0.5], rtol=0, atol=1e-12)


def test_pure_ridge():
    np.testing.assert_allclose(solve_weights(np.zeros((2, 2)), np.ones(2), 1.0), [-1.0, -1.0], rtol=0, atol=1e-12)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        solve_weights(np.eye(2), np.ones(2), -1.0)


def random_instance(rng):
    n, K = int(rng.integers(1, 21)), int(rng.integers(1, 6))
    P = rng.dirichlet(np.ones(K), size=n)
    g = rng.normal(size=n)
    h = rng.uniform(0, 1, size=n) * (rng.uniform(size=n) > 0.2)
    lam = float(rng.choice([0.0, 0.5, 1.0]))
    return P, g, h, lam


def gd_minimize(A, B, lam, steps=10_000):
    """Plain gradient descent on B.W + W'AW/2 + lam|W|^2/2."""
    M = A + lam * np.eye(len(B))
    L = max(np.linalg.eigvalsh(M).max(), 1e-12)
    W = np.zeros(len(B))
    for _ in range(steps):
        W -= (M @ W + B) / L
    return W


def test_solution_not_worse_than_gradient_descent_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        P, g, h, lam = random_instance(rng)
        A, B = accumulate_AB(P, g, h)
        W, info = solve_weights(A, B, lam, return_info=True)
        # a singular system at lam=0 is unbounded below; compare on the shifted
        # problem the solver actually solved
        lam_eff = lam if info["jitter"] is None else info["jitter"]
        ref = gd_minimize(A, B, lam_eff)
        assert quadratic_objective(W, A, B, lam_eff) <= quadratic_objective(ref, A, B, lam_eff) + 1e-6


def test_stationarity_and_objective_decrease():
    rng = np.random.default_rng(3)
    for _ in range(100):
        P, g, h, lam = random_instance(rng)
        A, B = accumulate_AB(P, g, h)
        W, info = solve_weights(A, B, lam, return_info=True)
        shift = info["jitter"] if info["jitter"] is not None else lam
        resid = (A + shift * np.eye(len(B))) @ W + B
        assert np.abs(resid).max() < 1e-8 * (1 + np.abs(B).max())
        assert quadratic_objective(W, A, B, lam) <= 1e-12


def test_singular_system_uses_jitter():
    A = np.zeros((3, 3))
    W, info = solve_weights(A, np.array([1.0, 0.0, -1.0]), 0.0, return_info=True)
    assert info["jitter"] == pytest.approx(1e-7)
    np.testing.assert_allclose(W, [-1e7, 0.0, 1e7])


def test_lambda_zero_regular_system_has_no_jitter():
    _, info = solve_weights(np.eye(2) * 2, np.ones(2), 0.0, return_info=True)
    assert info["jitter"] is None


def test_unsolvable_raises():
    with pytest.raises(SolverError):
        solve_weights(np.full((2, 2), np.nan), np.ones(2), 1.0)
