"""Stationarity via the reference prox-gradient step, plus an error-bound probe.

The solver never takes the reference step; it exists to measure how far the
current iterate is from being stationary. The x-side uses the shortened step
gamma/eta (eta > 1), the w-side uses tau. Convergence is quantified by the
squared normalized step lengths, combined with the weights q'gamma/(2 eta)
and q tau / 2 that appear in the descent estimate.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import EvalCounters, IterateState, ProblemInstance, objective


def reference_step(
    problem: ProblemInstance,
    state: IterateState,
    schedule,
    counters: EvalCounters | None = None,
):
    """Full prox-gradient reference pair (w_bar, x_bar); costs n fun + n grad evals."""
    n = problem.n
    fvals = problem.all_losses(state.x)
    grads = problem.all_grads(state.x)
    if counters is not None:
        counters.fun_evals += n
        counters.grad_evals += n
    w_bar = problem.reg_w.prox(state.w - (schedule.tau / n) * fvals, schedule.tau)
    step = schedule.gamma / schedule.eta
    weighted_grad = state.w @ grads / n
    x_bar = problem.reg_x.prox(state.x - step * weighted_grad, step)
    return w_bar, x_bar


def measure_from_reference(state, w_bar, x_bar, schedule, plan):
    """(weighted, w_component, x_component) from a precomputed reference pair."""
    x_comp = float(
        np.sum(((schedule.eta / schedule.gamma) * (state.x - x_bar)) ** 2)
    )
    w_comp = float(np.sum(((state.w - w_bar) / schedule.tau) ** 2))
    weighted = (
        plan.q_prime * schedule.gamma / (2.0 * schedule.eta) * x_comp
        + plan.q * schedule.tau / 2.0 * w_comp
    )
    return weighted, w_comp, x_comp


def stationarity_measure(problem, state, schedule, plan):
    """Weighted squared normalized step lengths of the reference prox-gradient maps.

    Returns (weighted, w_component, x_component). Never mutates state.
    """
    w_bar, x_bar = reference_step(problem, state, schedule)
    return measure_from_reference(state, w_bar, x_bar, schedule, plan)


def error_bound_probe(problem, states, schedule, f_star: float):
    """Empirical probe of the error-bound modulus along a trajectory.

    For each state returns (squared-steps sum) / (F(w, x) - f_star), a lower
    estimate of the modulus relating suboptimality to squared reference
    steps. Entries are None where the denominator vanishes (at or below the
    1e-15 guard) or where F < f_star - 1e-9, which means f_star is stale
    (flagged with a warning). Diagnostic only.
    """
    ratios = []
    for state in states:
        value = objective(problem, state)
        gap = value - f_star
        if gap < -1e-9:
            warnings.warn(
                f"f_star={f_star} exceeds an observed objective {value}; "
                "it is stale, ratio omitted",
                stacklevel=2,
            )
            ratios.append(None)
            continue
        if gap <= 1e-15:
            ratios.append(None)
            continue
        w_bar, x_bar = reference_step(problem, state, schedule)
        x_comp = np.sum(((schedule.eta / schedule.gamma) * (state.x - x_bar)) ** 2)
        w_comp = np.sum(((state.w - w_bar) / schedule.tau) ** 2)
        ratios.append(float(x_comp + w_comp) / gap)
    return ratios
