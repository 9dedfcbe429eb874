"""Per-round linear system for the output scores.

With soft assignments ``P`` (n x K), gradients ``g`` and Hessians ``h`` the
second-order objective

    sum_i g_i (P W)_i + 1/2 h_i (P W)_i**2 + lambda/2 |W|**2

is minimized by ``(A + lambda I) W = -B`` where ``A = P'(h * P)`` and
``B = P'g``. ``A`` and ``B`` are plain sums over rows, so partial sums from
row blocks or workers add up to the full system.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

JITTER_STEPS = 4
RESID_TOL = 1e-8


class SolverError(ArithmeticError):
    pass


def accumulate_AB(P, g, h):
    """Partial system ``(A, B)`` for one block of rows; ``B`` is un-negated."""
    P = np.asarray(P, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if P.shape[0] != len(g) or len(g) != len(h):
        raise ValueError("P, g and h must have the same number of rows")
    if np.any(h < 0):
        raise ValueError("Hessian weights must be non-negative")
    A = (P * h[:, None]).T @ P
    # mirror the upper triangle so A is exactly symmetric
    A = np.triu(A) + np.triu(A, 1).T
    B = P.T @ g
    return A, B


def quadratic_objective(W, A, B, lam) -> float:
    """Second-order round objective in terms of the summed system."""
    W = np.asarray(W, dtype=np.float64)
    return float(B @ W + 0.5 * W @ A @ W + 0.5 * lam * W @ W)


def solve_weights(A, B, lam: float, return_info: bool = False):
    """Solve ``(A + lam I) W = -B`` by Cholesky.

    If the factorization fails, or leaves a residual above
    ``1e-8 * (1 + max|B|)``, the diagonal shift is raised to
    ``max(lam, 1e-8) * 10**k`` for ``k = 1..4``; ``info['jitter']`` records the
    shift actually used when it differs from ``lam``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    K = len(B)
    shifts = [lam] + [max(lam, 1e-8) * 10.0 ** k for k in range(1, JITTER_STEPS + 1)]
    for shift in shifts:
        M = A + shift * np.eye(K)
        try:
            c = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            continue
        W = scipy.linalg.cho_solve(c, -B)
        # a factorization that succeeds on a numerically singular matrix can
        # still give a useless W; treat a large residual like a failed factor
        resid = np.abs(M @ W + B).max() if K else 0.0
        if np.all(np.isfinite(W)) and resid < RESID_TOL * (1.0 + np.abs(B).max(initial=0.0)):
            if shift != lam:
                log.info("system singular at lambda=%g, solved with shift %g", lam, shift)
            if return_info:
                return W, {"jitter": shift if shift != lam else None}
            return W
    raise SolverError(f"could not solve {K}x{K} system even with shift {shifts[-1]:g}")
