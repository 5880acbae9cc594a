"""Proximal operators and projections for the regularizers used by the solvers."""

from __future__ import annotations

import numpy as np


class DegenerateProjectionError(ValueError):
    """The projection is set-valued at this input (no canonical selection)."""


def project_capped_simplex(v: np.ndarray, h: float) -> np.ndarray:
    """Euclidean projection onto {w in [0,1]^n : sum(w) = h}.

    Coordinates of the projection are clip(v_i - theta, 0, 1) where theta is
    the unique root of the nonincreasing piecewise-linear function
    g(theta) = sum_i clip(v_i - theta, 0, 1) - h. The root is bracketed by a
    binary search over the sorted breakpoints {v_i - 1, v_i} and resolved by
    linear interpolation, O(n log n) total.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if not 0 <= h <= n:
        raise ValueError(f"capped simplex needs 0 <= h <= n, got h={h} with n={n}")
    if h == 0:
        return np.zeros(n)
    if h == n:
        return np.ones(n)

    def g(theta):
        return np.clip(v - theta, 0.0, 1.0).sum() - h

    bps = np.concatenate([v - 1.0, v])
    bps.sort()
    # g(bps[0]) = n - h > 0 and g(bps[-1]) = -h < 0, so a sign change exists.
    lo, hi = 0, bps.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if g(bps[mid]) >= 0.0:
            lo = mid
        else:
            hi = mid
    g_lo = g(bps[lo])
    if g_lo == 0.0:
        theta = bps[lo]
    else:
        # Between consecutive breakpoints g is linear with slope -(# active coords).
        mid_theta = 0.5 * (bps[lo] + bps[hi])
        active = (v - mid_theta > 0.0) & (v - mid_theta < 1.0)
        m = int(active.sum())
        theta = bps[hi] if m == 0 else bps[lo] + g_lo / m
    w = np.clip(v - theta, 0.0, 1.0)
    # Spread the round-off residual of the sum constraint over interior coords.
    interior = (w > 0.0) & (w < 1.0)
    m = int(interior.sum())
    if m > 0:
        w[interior] -= (w.sum() - h) / m
    return w


def prox_ridge(v: np.ndarray, step: float, coeff: float) -> np.ndarray:
    """Prox of the quadratic penalty (coeff/2)*||x||^2: shrink by 1/(1 + step*coeff)."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if coeff < 0:
        raise ValueError(f"ridge coefficient must be nonnegative, got {coeff}")
    return np.asarray(v, dtype=float) / (1.0 + step * coeff)


def project_stiefel(mat: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal columns in Frobenius norm (polar factor).

    Raises DegenerateProjectionError when the input is (numerically) rank
    deficient, where the nearest point is not unique.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] < mat.shape[1]:
        raise ValueError(f"expected a tall m x k matrix, got shape {mat.shape}")
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s[-1] < 1e-12:
        raise DegenerateProjectionError(
            f"rank-deficient input (smallest singular value {s[-1]:.3e})"
        )
    return u @ vt


def project_frobenius_sphere(h: np.ndarray) -> np.ndarray:
    """Rescale to unit Frobenius norm; every unit point is equidistant from 0."""
    h = np.asarray(h, dtype=float)
    norm = np.linalg.norm(h)
    if norm <= 1e-12:
        raise DegenerateProjectionError(f"input too close to zero (norm {norm:.3e})")
    return h / norm


def prox_indicator_all_ones(v: np.ndarray) -> np.ndarray:
    """Prox of the indicator of the all-ones vector (trimming disabled)."""
    return np.ones_like(np.asarray(v, dtype=float))
