import numpy as np
import pytest

from trimfit.core import EvalCounters, IterateState, Zero, ProblemInstance, objective
from trimfit.estimator import DualTable, refresh_all
from trimfit.problems import TrimmedLS
from trimfit.smart import (
    SamplingPlan,
    StepSizeSchedule,
    initial_weights,
    smart_step,
    theory_schedule,
)
from trimfit.stationarity import (
    error_bound_probe,
    measure_from_reference,
    reference_step,
    stationarity_measure,
)

from conftest import make_quadratic


def untrimmed_ridge_ls(seed=0, n=30, p=3, lam=0.4):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, p))
    b = A @ rng.normal(size=p) + 0.05 * rng.normal(size=n)
    dataset = TrimmedLS(A, b, h=n, ridge=lam)
    x_star = np.linalg.solve(A.T @ A + lam * np.eye(p), A.T @ b)
    return dataset.build(), x_star


def test_fixed_point_has_zero_measure():
    prob, x_star = untrimmed_ridge_ls()
    state = IterateState(w=np.ones(prob.n), x=x_star.copy(), k=0)
    sched = StepSizeSchedule(gamma=0.05, tau=0.2, eta=2.0)
    plan = SamplingPlan.full(prob.n)
    w_bar, x_bar = reference_step(prob, state, sched)
    np.testing.assert_allclose(w_bar, state.w, atol=1e-12)
    np.testing.assert_allclose(x_bar, state.x, atol=1e-8)
    weighted, w_comp, x_comp = stationarity_measure(prob, state, sched, plan)
    assert w_comp <= 1e-18
    assert x_comp <= 1e-10
    assert weighted <= 1e-10


def test_reference_x_matches_closed_form_optimum():
    prob, x_star = untrimmed_ridge_ls(seed=3)
    state = IterateState(w=np.ones(prob.n), x=x_star.copy(), k=0)
    sched = StepSizeSchedule(gamma=0.02, tau=0.1, eta=3.0)
    _, x_bar = reference_step(prob, state, sched)
    assert np.linalg.norm(x_bar - state.x) <= 1e-8


def test_reference_step_costs_and_purity():
    prob, _ = untrimmed_ridge_ls(seed=4)
    state = IterateState(w=np.ones(prob.n), x=np.zeros(prob.dim), k=0)
    w_before, x_before = state.w.copy(), state.x.copy()
    counters = EvalCounters()
    sched = StepSizeSchedule(gamma=0.02, tau=0.1, eta=2.0)
    reference_step(prob, state, sched, counters)
    assert counters.fun_evals == prob.n and counters.grad_evals == prob.n
    assert counters.prox_w_evals == 0 and counters.prox_x_evals == 0
    np.testing.assert_array_equal(state.w, w_before)
    np.testing.assert_array_equal(state.x, x_before)


def test_measure_homogeneity_in_the_step():
    rng = np.random.default_rng(5)
    sched = StepSizeSchedule(gamma=0.3, tau=0.7, eta=2.5)
    plan = SamplingPlan.saga(4, 2, q=0.3)
    state = IterateState(w=rng.uniform(0.2, 0.8, 4), x=rng.normal(size=3), k=0)
    w_bar = state.w - rng.normal(size=4) * 0.1
    x_bar = state.x - rng.normal(size=3) * 0.1
    _, w1, x1 = measure_from_reference(state, w_bar, x_bar, sched, plan)
    # doubling the step doubles (state - bar), quadrupling both components
    far = IterateState(w=2 * state.w - w_bar, x=2 * state.x - x_bar, k=0)
    _, w2, x2 = measure_from_reference(far, w_bar, x_bar, sched, plan)
    assert x2 == pytest.approx(4 * x1, rel=1e-12)
    assert w2 == pytest.approx(4 * w1, rel=1e-12)


def test_weighted_measure_combination():
    sched = StepSizeSchedule(gamma=0.3, tau=0.7, eta=2.5)
    plan = SamplingPlan.saga(4, 2, q=0.3)
    state = IterateState(w=np.full(4, 0.5), x=np.zeros(2), k=0)
    w_bar = state.w - 0.7 * np.array([1.0, -1.0, 0.0, 0.0])  # (w - wbar)/tau has norm^2 = 2
    x_bar = state.x - (0.3 / 2.5) * np.array([3.0, 4.0])  # (eta/gamma)(x - xbar) has norm^2 = 25
    weighted, w_comp, x_comp = measure_from_reference(state, w_bar, x_bar, sched, plan)
    assert w_comp == pytest.approx(2.0)
    assert x_comp == pytest.approx(25.0)
    expected = (0.7 * 0.3 / (2 * 2.5)) * 25.0 + (0.3 * 0.7 / 2) * 2.0
    assert weighted == pytest.approx(expected, rel=1e-12)


def test_w_reference_reprojects_to_itself():
    dataset = TrimmedLS(
        np.random.default_rng(6).normal(size=(12, 2)),
        np.random.default_rng(7).normal(size=12),
        h=9,
    )
    prob = dataset.build()
    state = IterateState(w=initial_weights(prob), x=np.array([0.3, -0.2]), k=0)
    sched = StepSizeSchedule(gamma=0.05, tau=0.4, eta=2.0)
    w_bar, _ = reference_step(prob, state, sched)
    np.testing.assert_allclose(prob.reg_w.prox(w_bar, sched.tau), w_bar, atol=1e-10)


def test_min_measure_decays_like_one_over_t():
    from trimfit.data import gen_trimmed_ls

    dataset, _, _ = gen_trimmed_ls(60, 4, 0.1, 0.05, seed=9)
    prob = dataset.build()
    plan = SamplingPlan.saga(prob.n, 16, seed=2)
    sched = theory_schedule(prob, plan)
    rng = np.random.default_rng(plan.seed)
    state = IterateState(w=initial_weights(prob), x=np.zeros(prob.dim), k=0)
    duals = DualTable.allocate(prob.n, prob.dim)
    refresh_all(prob, state, duals)
    counters = EvalCounters()
    checkpoints = [100, 300, 1000, 3000]
    mins, running = [], np.inf
    for t in range(1, checkpoints[-1] + 1):
        smart_step(prob, state, duals, plan, sched, rng, counters)
        running = min(running, stationarity_measure(prob, state, sched, plan)[0])
        if t in checkpoints:
            mins.append(running)
    logs_t = np.log(checkpoints)
    logs_m = np.log(mins)
    slope = np.polyfit(logs_t, logs_m, 1)[0]
    assert slope <= -0.8


class TestErrorBoundProbe:
    def setup_method(self):
        # single quadratic f(x) = (x - 1)^2 / 2 with free weight held at 1
        self.prob = ProblemInstance(
            n=1,
            x_shape=(1,),
            loss_eval=lambda i, x: 0.5 * (x[0] - 1.0) ** 2,
            grad_eval=lambda i, x: np.array([x[0] - 1.0]),
            lipschitz=np.ones(1),
            weight_bounds=np.ones(1),
            reg_w=Zero(),
            reg_x=Zero(),
        )
        self.sched = StepSizeSchedule(gamma=0.1, tau=0.05, eta=2.0)

    def states(self, xs):
        return [IterateState(w=np.ones(1), x=np.array([x]), k=0) for x in xs]

    def test_quadratic_ratios_match_closed_form(self):
        # with w = 1: x part gives (x-1)^2, w part gives f(x)^2, so
        # ratio = ((x-1)^2 + f^2) / f = 2 + f -> bounded below by 2
        xs = [3.0, 2.0, 1.5, 1.1, 1.01]
        ratios = error_bound_probe(self.prob, self.states(xs), self.sched, f_star=0.0)
        for x, ratio in zip(xs, ratios):
            f = 0.5 * (x - 1.0) ** 2
            assert ratio == pytest.approx(2.0 + f, rel=1e-10)
            assert ratio >= 2.0


    def test_minimizer_with_exact_f_star_is_skipped(self):
        ratios = error_bound_probe(self.prob, self.states([1.0]), self.sched, f_star=0.0)
        assert ratios == [None]

    def test_stale_f_star_is_flagged(self):
        with pytest.warns(UserWarning, match="stale"):
            ratios = error_bound_probe(
                self.prob, self.states([1.5]), self.sched, f_star=1.0
            )
        assert ratios == [None]

    def test_ratios_nonnegative_on_arbitrary_trajectory(self):
        rng = np.random.default_rng(11)
        states = self.states(rng.normal(size=20) * 3 + 1)
        f_star = min(objective(self.prob, s) for s in states) - 1e-3
        ratios = error_bound_probe(self.prob, states, self.sched, f_star)
        assert all(r is None or r >= 0 for r in ratios)
