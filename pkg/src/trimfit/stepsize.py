"""Theorem-driven step sizes: the shortening factor eta, x-step gamma, w-step tau.

Two regimes are provided. The "sublinear" formulas hold with no regularity
assumption; the "linear" formulas are the sharper constants used when an
error bound holds. Both take the w-step probability q (hence q' = 1 - q) and
the per-index dual refresh probabilities rho_i from the sampling plan, and
the per-example weight bounds B_i and global gradient Lipschitz constant L
from the problem.
"""

from __future__ import annotations

import math

import numpy as np


class InvalidPlanError(ValueError):
    """The plan puts a step-size formula on a division-by-zero boundary."""


def rho_for_policy(policy: str, n: int, b: int) -> np.ndarray:
    """Per-index probability that a given dual variable refreshes in one iteration.

    saga: the dual refreshes whenever its index lands in the size-b batch
    drawn with replacement, so rho = 1 - (1 - 1/n)^b.  svrg: duals only
    refresh on full w-steps, rho = 0.  full: every dual refreshes, rho = 1.
    """
    if policy == "saga":
        return np.full(n, 1.0 - (1.0 - 1.0 / n) ** b)
    if policy == "svrg":
        return np.zeros(n)
    if policy == "full":
        return np.ones(n)
    raise ValueError(f"unknown dual-update policy {policy!r}")


def _stale_factor(plan) -> np.ndarray:
    """q'(1 - rho_i), the per-index probability a dual survives one iteration unrefreshed."""
    return plan.q_prime * (1.0 - np.asarray(plan.rho, dtype=float))


def _sublinear_root(plan, problem, epsilon0: float) -> float:
    """sqrt((1/n) sum_i q'(1+eps0) B_i^2 / (2b (1 - sqrt(q'(1-rho_i)))^2))."""
    s = _stale_factor(plan)
    if np.any(s >= 1.0):
        raise InvalidPlanError(
            "q'(1-rho_i) must be < 1 for the sublinear constants "
            "(a w-step probability q > 0 or a refreshing dual policy is required)"
        )
    bounds = problem.weight_bounds
    terms = plan.q_prime * (1.0 + epsilon0) * bounds**2 / (
        2.0 * plan.b * (1.0 - np.sqrt(s)) ** 2
    )
    return math.sqrt(float(terms.mean()))


def _linear_root(plan, problem, epsilon0: float) -> float:
    """Same shape with denominator 2b sqrt(q'(1-rho)) (1 - (q'(1-rho))^(1/4))^2."""
    s = _stale_factor(plan)
    if np.any(s <= 0.0) or np.any(s >= 1.0):
        raise InvalidPlanError(
            "q'(1-rho_i) must lie strictly in (0, 1) for the linear-rate constants"
        )
    bounds = problem.weight_bounds
    terms = plan.q_prime * (1.0 + epsilon0) * bounds**2 / (
        2.0 * plan.b * np.sqrt(s) * (1.0 - s**0.25) ** 2
    )
    return math.sqrt(float(terms.mean()))


def _mean_bound(problem) -> float:
    return float(problem.weight_bounds.mean())


def eta_sublinear(plan, problem, epsilon0: float, gamma: float) -> float:
    """Shortening factor eta = 2 + 4*gamma*(L*root + 4L*mean(B)) (no-regularity regime)."""
    lip = problem.max_lipschitz
    root = _sublinear_root(plan, problem, epsilon0)
    return 2.0 + 4.0 * gamma * (lip * root + 4.0 * lip * _mean_bound(problem))


def gamma_sublinear(plan, problem, epsilon0: float) -> float:
    """Largest admissible x-step 1/(4L*root + L*mean(B)), clipped below the prox guard."""
    lip = problem.max_lipschitz
    root = _sublinear_root(plan, problem, epsilon0)
    gamma = 1.0 / (4.0 * lip * root + lip * _mean_bound(problem))
    return min(gamma, 0.999 * problem.reg_x.prox_guard)


def eta_linear(plan, problem, epsilon0: float, gamma: float) -> float:
    """Shortening factor for the linear-rate regime: 2 + 4*gamma*(L*root + L*mean(B))."""
    lip = problem.max_lipschitz
    root = _linear_root(plan, problem, epsilon0)
    return 2.0 + 4.0 * gamma * (lip * root + lip * _mean_bound(problem))


def gamma_linear(plan, problem, epsilon0: float) -> float:
    """x-step for the linear-rate regime, clipped below the prox guard."""
    lip = problem.max_lipschitz
    root = _linear_root(plan, problem, epsilon0)
    gamma = 1.0 / (4.0 * lip * root + lip * _mean_bound(problem))
    return min(gamma, 0.999 * problem.reg_x.prox_guard)


def tau_for_variant(
    variant: str,
    gamma: float,
    eta: float,
    n: int,
    b: int,
    prox_guard: float = math.inf,
) -> float:
    """w-step size for each named variant, clipped below the w-prox guard.

    saga: (n-1) gamma / eta.  svrg: (1 - (1-1/n)^b) (1-1/n)^b gamma / eta.
    full: gamma / eta, so that q*tau = q'*gamma/eta with q = q' = 1/2.
    """
    if variant == "saga":
        if n <= 1:
            raise InvalidPlanError("saga tau is zero for n = 1")
        tau = (n - 1) * gamma / eta
    elif variant == "svrg":
        zeta = (1.0 - 1.0 / n) ** b
        tau = (1.0 - zeta) * zeta * gamma / eta
        if tau <= 0:
            raise InvalidPlanError("svrg tau degenerates for this (n, b)")
    elif variant == "full":
        tau = gamma / eta
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return min(tau, 0.999 * prox_guard)
