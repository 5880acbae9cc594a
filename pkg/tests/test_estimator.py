import itertools

import numpy as np
import pytest

from trimfit.core import EvalCounters, IterateState
from trimfit.estimator import (
    DualTable,
    dual_residuals,
    refresh_all,
    update_subset,
    vr_gradient,
)

from conftest import make_quadratic


def fresh_setup(n=4, seed=0, stale=False):
    rng = np.random.default_rng(seed)
    prob = make_quadratic(rng.uniform(0.5, 2.0, n), rng.normal(size=n), h=n - 1)
    w = np.clip(rng.uniform(0, 1, n), 0.05, 1.0)
    state = IterateState(w=w, x=rng.normal(size=1), k=0)
    duals = DualTable.allocate(n, 1)
    refresh_all(prob, state, duals)
    if stale:
        state.x = state.x + rng.normal(size=1)  # table now refers to the old point
        state.k += 1
    return prob, state, duals


def full_weighted_gradient(prob, state):
    return state.w @ prob.all_grads(state.x) / prob.n


def test_fresh_table_gives_exact_mean_any_batch():
    prob, state, duals = fresh_setup()
    expected = full_weighted_gradient(prob, state)
    for batch in ([0], [2, 2], [0, 1, 3], [3, 3, 3, 3]):
        np.testing.assert_allclose(
            vr_gradient(prob, state, duals, np.array(batch)), expected, atol=1e-13
        )


def test_full_batch_telescopes_for_stale_duals():
    prob, state, duals = fresh_setup(stale=True)
    batch = np.arange(prob.n)
    np.testing.assert_allclose(
        vr_gradient(prob, state, duals, batch),
        full_weighted_gradient(prob, state),
        atol=1e-13,
    )


@pytest.mark.parametrize("n,b", [(4, 2), (5, 2), (5, 3), (3, 1)])
def test_exhaustive_enumeration_unbiased(n, b):
    prob, state, duals = fresh_setup(n=n, seed=1, stale=True)
    full = full_weighted_gradient(prob, state)
    total = np.zeros(1)
    count = 0
    for batch in itertools.product(range(n), repeat=b):
        total += vr_gradient(prob, state, duals, np.array(batch))
        count += 1
    assert count == n**b
    np.testing.assert_allclose(total / count, full, atol=1e-12)


@pytest.mark.parametrize("n,b", [(4, 2), (5, 2)])
def test_variance_bound_exhaustive(n, b):
    prob, state, duals = fresh_setup(n=n, seed=2, stale=True)
    full = full_weighted_gradient(prob, state)
    residuals = dual_residuals(prob, state, duals)
    second_moment = 0.0
    for batch in itertools.product(range(n), repeat=b):
        v = vr_gradient(prob, state, duals, np.array(batch))
        second_moment += float(np.sum((v - full) ** 2))
    second_moment /= n**b
    assert second_moment <= residuals.sum() / (b * n) + 1e-12


def test_vr_gradient_counts_exactly_b():
    prob, state, duals = fresh_setup()
    counters = EvalCounters()
    vr_gradient(prob, state, duals, np.array([1, 1, 3]), counters)
    assert counters.grad_evals == 3
    assert counters.fun_evals == 0


def test_refresh_idempotent_and_counts():
    prob, state, duals = fresh_setup(stale=True)
    counters = EvalCounters()
    refresh_all(prob, state, duals, counters)
    y_once = duals.y.copy()
    refresh_all(prob, state, duals, counters)
    np.testing.assert_array_equal(duals.y, y_once)
    assert counters.grad_evals == 2 * prob.n
    np.testing.assert_allclose(
        vr_gradient(prob, state, duals, np.array([2])),
        full_weighted_gradient(prob, state),
        atol=1e-13,
    )


def test_aggregate_matches_reverse_order_sum():
    prob, state, duals = fresh_setup(n=7, seed=3, stale=True)
    update_subset(prob, state, duals, np.array([1, 5]))
    reverse = np.zeros(1)
    for i in reversed(range(7)):
        reverse = reverse + duals.y[i]
    np.testing.assert_allclose(duals.aggregate, reverse, rtol=1e-9)


def test_update_subset_empty_and_all():
    prob, state, duals = fresh_setup(n=5, seed=4, stale=True)
    before = duals.y.copy()
    update_subset(prob, state, duals, np.array([], dtype=int))
    np.testing.assert_array_equal(duals.y, before)

    other = DualTable.allocate(prob.n, 1)
    refresh_all(prob, state, other)
    update_subset(prob, state, duals, np.arange(5))
    np.testing.assert_allclose(duals.y, other.y, atol=1e-15)
    np.testing.assert_allclose(duals.aggregate, other.aggregate, atol=1e-12)


def test_aggregate_drift_stays_tiny_over_many_updates():
    rng = np.random.default_rng(5)
    n = 40
    prob, state, duals = fresh_setup(n=n, seed=5)
    for _ in range(10_000):
        state.x = state.x + 0.01 * rng.normal(size=1)
        state.k += 1
        subset = rng.choice(n, size=rng.integers(1, 6), replace=False)
        update_subset(prob, state, duals, subset)
    drift = np.linalg.norm(duals.aggregate - duals.y.sum(axis=0))
    scale = max(1.0, np.linalg.norm(duals.y.sum(axis=0)))
    assert drift / scale < 1e-9


def test_dual_residuals_fresh_and_stale():
    prob, state, duals = fresh_setup(n=6, seed=6)
    np.testing.assert_allclose(dual_residuals(prob, state, duals), np.zeros(6), atol=1e-18)
    state.x = state.x + 0.5
    state.k += 1
    res = dual_residuals(prob, state, duals)
    assert np.all(res >= 0)
    # direct recomputation per example
    for i in range(6):
        fresh = state.w[i] * prob.grad_eval(i, state.x)
        assert res[i] == pytest.approx(float(np.sum((fresh - duals.y[i]) ** 2)))


def test_provenance_tracks_last_refresh_iteration():
    prob, state, duals = fresh_setup(n=5, seed=7)
    history = {0: (state.w.copy(), state.x.copy())}
    rng = np.random.default_rng(8)
    for step in range(1, 30):
        state.x = state.x + 0.1 * rng.normal(size=1)
        state.k = step
        history[step] = (state.w.copy(), state.x.copy())
        update_subset(prob, state, duals, rng.choice(5, size=2, replace=False))
    for i in range(5):
        took = int(duals.last_refresh[i])
        w_then, x_then = history[took]
        expected = w_then[i] * prob.grad_eval(i, x_then)
        np.testing.assert_allclose(duals.y[i], expected, atol=1e-14)
