"""Variance-reduced gradient estimator and the dual-variable table it reads.

Each dual variable y_i caches w_i * grad f_i(x) from some past iterate. The
estimator for a sampled batch I (a multiset of size b, drawn with
replacement) is

    v = (1/b) * sum_{i in I} (w_i grad f_i(x) - y_i) + (1/n) * sum_j y_j

which is conditionally unbiased for the full weighted gradient and has
variance bounded by the mean squared staleness of the table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EvalCounters, IterateState, ProblemInstance


@dataclass
class DualTable:
    """Per-example dual vectors plus an incrementally maintained aggregate sum.

    ``aggregate`` caches sum_i y_i; it is adjusted incrementally on subset
    updates and rebuilt exactly every n subset updates to cap floating-point
    drift.  ``last_refresh`` records the iteration at which each row was last
    written. Single writer.
    """

    y: np.ndarray
    aggregate: np.ndarray
    last_refresh: np.ndarray
    updates_since_resum: int = 0

    @classmethod
    def allocate(cls, n: int, d: int) -> "DualTable":
        return cls(
            y=np.zeros((n, d)),
            aggregate=np.zeros(d),
            last_refresh=np.full(n, -1, dtype=int),
        )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def resum(self):
        self.aggregate = self.y.sum(axis=0)
        self.updates_since_resum = 0


def weighted_batch_grads(
    problem: ProblemInstance,
    state: IterateState,
    batch: np.ndarray,
    counters: EvalCounters | None = None,
) -> np.ndarray:
    """Rows w_i * grad f_i(x) for i in batch; counts len(batch) gradient evals."""
    batch = np.asarray(batch, dtype=int)
    grads = problem.grads(batch, state.x)
    if counters is not None:
        counters.grad_evals += batch.size
    return state.w[batch, None] * grads


def combine(duals: DualTable, batch: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    """Assemble the estimator from precomputed weighted batch gradients.

    Summands are reduced in batch (index) order, so the result is
    deterministic for a given batch realization.
    """
    batch = np.asarray(batch, dtype=int)
    correction = (weighted - duals.y[batch]).sum(axis=0) / batch.size
    return correction + duals.aggregate / duals.n


def vr_gradient(
    problem: ProblemInstance,
    state: IterateState,
    duals: DualTable,
    batch: np.ndarray,
    counters: EvalCounters | None = None,
) -> np.ndarray:
    """The variance-reduced estimate of (1/n) sum_i w_i grad f_i(x).

    ``batch`` is a multiset: duplicate indices contribute multiple summands.
    Performs exactly len(batch) gradient evaluations.
    """
    weighted = weighted_batch_grads(problem, state, batch, counters)
    return combine(duals, batch, weighted)


def apply_dual_updates(
    duals: DualTable, idx: np.ndarray, values: np.ndarray, iteration: int
):
    """Overwrite rows ``idx`` (unique indices) with ``values``, adjusting the aggregate."""
    idx = np.asarray(idx, dtype=int)
    if idx.size == 0:
        return
    duals.aggregate = duals.aggregate + (values - duals.y[idx]).sum(axis=0)
    duals.y[idx] = values
    duals.last_refresh[idx] = iteration
    duals.updates_since_resum += 1
    if duals.updates_since_resum >= duals.n:
        duals.resum()


def refresh_all(
    problem: ProblemInstance,
    state: IterateState,
    duals: DualTable,
    counters: EvalCounters | None = None,
):
    """Set y_i = w_i grad f_i(x) for every i and rebuild the aggregate from scratch."""
    duals.y = weighted_batch_grads(problem, state, np.arange(problem.n), counters)
    duals.last_refresh[:] = state.k
    duals.resum()


def update_subset(
    problem: ProblemInstance,
    state: IterateState,
    duals: DualTable,
    subset: np.ndarray,
    counters: EvalCounters | None = None,
):
    """Refresh y_i = w_i grad f_i(x) for i in subset (a set of unique indices)."""
    subset = np.unique(np.asarray(subset, dtype=int))
    if subset.size == 0:
        return
    values = weighted_batch_grads(problem, state, subset, counters)
    apply_dual_updates(duals, subset, values, state.k)


def dual_residuals(
    problem: ProblemInstance,
    state: IterateState,
    duals: DualTable,
    counters: EvalCounters | None = None,
) -> np.ndarray:
    """Per-example squared staleness ||w_i grad f_i(x) - y_i||^2 (diagnostic)."""
    fresh = weighted_batch_grads(problem, state, np.arange(problem.n), counters)
    diff = fresh - duals.y
    return np.einsum("ij,ij->i", diff, diff)
