"""The SMART iteration, its SAGA/SVRG/full variants, and PALM/PSPG/SG baselines.

One SMART iteration draws a coordinate j in {1, 2}. With probability q it
takes a w-step (prox of the trimming regularizer against the vector of
per-example losses) followed by a refresh of every dual variable at the new
weights; otherwise it takes an x-step along the variance-reduced gradient
estimate and refreshes the duals selected by the policy (saga: the sampled
batch; svrg: none; full: all). All randomness flows through one seeded
generator drawing j first, then the batch, so runs replay exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import stepsize
from .core import (
    AllOnes,
    EvalCounters,
    IterateState,
    LogRow,
    ProblemInstance,
    RunRecord,
    objective,
)
from .estimator import (
    DualTable,
    apply_dual_updates,
    combine,
    refresh_all,
    weighted_batch_grads,
)
from .stationarity import stationarity_measure

POLICIES = ("saga", "svrg", "full")


class NonFiniteObjectiveError(RuntimeError):
    """The objective became non-finite; carries the partial run record."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class SamplingPlan:
    """Batch size, w-step probability, dual-update policy, and RNG seed.

    rho is derived from the policy: per-index probability that a dual
    variable refreshes during one x-step.
    """

    n: int
    b: int
    q: float
    policy: str
    seed: int = 0
    rho: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not 1 <= self.b:
            raise ValueError(f"batch size must be >= 1, got {self.b}")
        if self.policy == "full" and self.b != self.n:
            raise ValueError("the full policy uses the whole index set, set b = n")
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"w-step probability must lie in [0, 1), got {self.q}")
        object.__setattr__(
            self, "rho", stepsize.rho_for_policy(self.policy, self.n, self.b)
        )

    @property
    def q_prime(self) -> float:
        return 1.0 - self.q

    @classmethod
    def saga(cls, n: int, b: int, seed: int = 0, q: Optional[float] = None):
        """SAGA variant: duals refresh on every sampled batch; default q = 1/n."""
        return cls(n=n, b=b, q=1.0 / n if q is None else q, policy="saga", seed=seed)

    @classmethod
    def svrg(cls, n: int, b: int, seed: int = 0, q: Optional[float] = None):
        """SVRG variant: duals refresh only on w-steps; default q = 1/ceil(n/b)."""
        if q is None:
            q = 1.0 / math.ceil(n / b)
        return cls(n=n, b=b, q=q, policy="svrg", seed=seed)

    @classmethod
    def full(cls, n: int, seed: int = 0, q: float = 0.5):
        """Deterministic estimator: the batch is the whole index set, q = 1/2."""
        return cls(n=n, b=n, q=q, policy="full", seed=seed)


def default_batch_size(n: int) -> int:
    """ceil(n^(2/3)), the batch size that balances the work of both step kinds."""
    return max(1, math.ceil(n ** (2.0 / 3.0)))


@dataclass(frozen=True)
class StepSizeSchedule:
    """Step sizes (gamma for x, tau for w) and the shortening factor eta."""

    gamma: float
    tau: float
    eta: float
    epsilon0: float = 0.5

    def __post_init__(self):
        if self.gamma <= 0 or self.tau <= 0:
            raise ValueError("step sizes must be positive")
        if self.eta <= 1.0:
            raise ValueError(f"eta must exceed 1, got {self.eta}")
        if not 0.0 < self.epsilon0 < 1.0:
            raise ValueError(f"epsilon0 must lie in (0, 1), got {self.epsilon0}")


def theory_schedule(
    problem: ProblemInstance,
    plan: SamplingPlan,
    epsilon0: float = 0.5,
    rate: str = "sublinear",
) -> StepSizeSchedule:
    """Schedule from the convergence analysis for the plan's variant.

    rate "sublinear" uses the no-assumption constants; "linear" the
    error-bound constants. gamma and tau are clipped below the respective
    prox guards when a regularizer's prox is only locally defined.
    """
    if rate == "sublinear":
        gamma = stepsize.gamma_sublinear(plan, problem, epsilon0)
        eta = stepsize.eta_sublinear(plan, problem, epsilon0, gamma)
    elif rate == "linear":
        gamma = stepsize.gamma_linear(plan, problem, epsilon0)
        eta = stepsize.eta_linear(plan, problem, epsilon0, gamma)
    else:
        raise ValueError(f"rate must be 'sublinear' or 'linear', got {rate!r}")
    tau = stepsize.tau_for_variant(
        plan.policy, gamma, eta, plan.n, plan.b, problem.reg_w.prox_guard
    )
    return StepSizeSchedule(gamma=gamma, tau=tau, eta=eta, epsilon0=epsilon0)


@dataclass(frozen=True)
class StopRule:
    """Stopping: epoch budget, optional stationarity tolerance, log cadence.

    ``log_stationarity=False`` skips the reference-step measure at log points
    (it costs n extra gradient evaluations per log) and records NaN instead;
    only useful for long benchmark runs that track the objective alone.
    """

    max_epochs: float
    stationarity_tol: Optional[float] = None
    log_every: float = 1.0
    max_iters: Optional[int] = None
    log_stationarity: bool = True

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if self.log_every <= 0:
            raise ValueError("log_every must be positive")


def _draw_batch(plan: SamplingPlan, rng) -> np.ndarray:
    if plan.policy == "full":
        return np.arange(plan.n)
    return rng.integers(0, plan.n, size=plan.b)


def _w_step(problem, state, schedule, counters) -> np.ndarray:
    """prox_{tau r1}(w - (tau/n) * (f_1(x), ..., f_n(x))); costs n fun evals."""
    fvals = problem.all_losses(state.x)
    counters.fun_evals += problem.n
    new_w = problem.reg_w.prox(
        state.w - (schedule.tau / problem.n) * fvals, schedule.tau
    )
    counters.prox_w_evals += 1
    return new_w


def smart_step(
    problem: ProblemInstance,
    state: IterateState,
    duals: DualTable,
    plan: SamplingPlan,
    schedule: StepSizeSchedule,
    rng,
    counters: EvalCounters,
):
    """One SMART iteration, updating state and duals in place.

    j = 1: w-prox step at the current losses, x unchanged, then all duals
    refresh at the new weights. j = 2: x-prox step along the estimator built
    from the sampled batch, w unchanged, then the policy's dual subset
    refreshes at the old weights and old point. Draw order per iteration is
    j first, then the batch.
    """
    take_w_step = rng.random() < plan.q
    batch = _draw_batch(plan, rng)
    if take_w_step:
        state.w = _w_step(problem, state, schedule, counters)
        # x is unchanged, so the refreshed duals belong to the new iterate;
        # advance k first so the provenance records the right index.
        state.k += 1
        refresh_all(problem, state, duals, counters)
        return
    weighted = weighted_batch_grads(problem, state, batch, counters)
    estimate = combine(duals, batch, weighted)
    try:
        new_x = problem.reg_x.prox(state.x - schedule.gamma * estimate, schedule.gamma)
    except ValueError as exc:
        raise type(exc)(f"{exc} (x-prox at iteration {state.k})") from exc
    counters.prox_x_evals += 1
    if plan.policy in ("saga", "full"):
        # Dual refresh reuses the weighted gradients already computed for the
        # estimator (old w, old x), so it costs no extra evaluations.
        uniq, first = np.unique(batch, return_index=True)
        apply_dual_updates(duals, uniq, weighted[first], state.k)
    state.x = new_x
    state.k += 1


def initial_weights(problem: ProblemInstance) -> np.ndarray:
    """Uniform feasible weights: project the constant-h/n vector onto dom(r1)."""
    reg = problem.reg_w
    fill = reg.h / problem.n if hasattr(reg, "h") else 1.0
    return reg.prox(np.full(problem.n, fill), 1.0)


class _Logger:
    """Shared trajectory logging: objective + stationarity at epoch marks."""

    def __init__(self, problem, schedule, plan, stop, counters, record):
        self.problem = problem
        self.schedule = schedule
        self.plan = plan
        self.stop = stop
        self.counters = counters
        self.record = record
        self.next_log = 0.0

    def due(self) -> bool:
        return self.counters.grad_evals / self.problem.n >= self.next_log

    def log(self, state) -> bool:
        """Append a row; returns True when the stationarity tolerance is met."""
        epoch = self.counters.grad_evals / self.problem.n
        value = objective(self.problem, state)
        if not math.isfinite(value):
            raise NonFiniteObjectiveError(
                f"objective became non-finite at iteration {state.k}", self.record
            )
        tol = self.stop.stationarity_tol
        if self.stop.log_stationarity or (tol is not None and tol > 0):
            weighted, w_comp, x_comp = stationarity_measure(
                self.problem, state, self.schedule, self.plan
            )
        else:
            weighted = w_comp = x_comp = math.nan
        self.record.log(
            LogRow(
                k=state.k,
                epoch=epoch,
                objective=value,
                stat_weighted=weighted,
                stat_w=w_comp,
                stat_x=x_comp,
                grad_evals=self.counters.grad_evals,
                fun_evals=self.counters.fun_evals,
                prox_w_evals=self.counters.prox_w_evals,
                prox_x_evals=self.counters.prox_x_evals,
            )
        )
        while self.next_log <= epoch:
            self.next_log += self.stop.log_every
        return tol is not None and tol > 0 and weighted <= tol


def _drive(problem, schedule, plan, stop, state, counters, step_once):
    """Common run loop: log at epoch marks, stop on budget or stationarity."""
    record = RunRecord()
    logger = _Logger(problem, schedule, plan, stop, counters, record)
    start = time.perf_counter()
    done = logger.log(state)
    iters = 0
    budget = stop.max_epochs * problem.n
    while not done:
        if counters.grad_evals >= budget:
            break
        if stop.max_iters is not None and iters >= stop.max_iters:
            break
        step_once(state)
        iters += 1
        if logger.due():
            done = logger.log(state)
    record.wall_time = time.perf_counter() - start
    return record, state


def run(
    problem: ProblemInstance,
    plan: SamplingPlan,
    schedule: StepSizeSchedule,
    stop: StopRule,
    x0: Optional[np.ndarray] = None,
    w0: Optional[np.ndarray] = None,
):
    """Run SMART from a fresh dual table; returns (RunRecord, final state).

    Initialization costs n gradient evaluations (y_i = w_i grad f_i(x0)).
    The objective and stationarity measure are evaluated at epoch marks only
    and are not charged to the work counters.
    """
    if plan.n != problem.n:
        raise ValueError(f"plan is for n={plan.n} but problem has n={problem.n}")
    if plan.q == 0.0 and not isinstance(problem.reg_w, AllOnes):
        raise ValueError("q = 0 never updates w; only valid with the all-ones regularizer")
    rng = np.random.default_rng(plan.seed)
    x = problem.default_x0(rng) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    w = initial_weights(problem) if w0 is None else np.asarray(w0, dtype=float).copy()
    state = IterateState(w=w, x=x, k=0)
    counters = EvalCounters()
    duals = DualTable.allocate(problem.n, problem.dim)
    refresh_all(problem, state, duals, counters)

    def step_once(st):
        smart_step(problem, st, duals, plan, schedule, rng, counters)

    return _drive(problem, schedule, plan, stop, state, counters, step_once)


# ---------------------------------------------------------------------------
# Baselines: PALM, PSPG, minibatch SG.
# ---------------------------------------------------------------------------


def palm_step(
    problem: ProblemInstance,
    state: IterateState,
    schedule: StepSizeSchedule,
    counters: EvalCounters,
):
    """Deterministic alternating step: w-prox, then x-prox with the full gradient
    at the new weights. Costs n fun + n grad + one prox of each kind."""
    state.w = _w_step(problem, state, schedule, counters)
    grads = problem.all_grads(state.x)
    counters.grad_evals += problem.n
    full = state.w @ grads / problem.n
    state.x = problem.reg_x.prox(state.x - schedule.gamma * full, schedule.gamma)
    counters.prox_x_evals += 1
    state.k += 1


def pspg_gamma(gamma: float, k: int) -> float:
    """Decaying x-step gamma / (1 + k)^0.51."""
    return gamma / (1.0 + k) ** 0.51


def pspg_step(
    problem: ProblemInstance,
    state: IterateState,
    k: int,
    schedule: StepSizeSchedule,
    rng,
    counters: EvalCounters,
):
    """Partially stochastic step: deterministic w-prox, then a single-sample
    x-step scaled by the decaying gamma_k."""
    state.w = _w_step(problem, state, schedule, counters)
    i = int(rng.integers(0, problem.n))
    grad = problem.grads(np.array([i]), state.x)[0]
    counters.grad_evals += 1
    gam = pspg_gamma(schedule.gamma, k)
    state.x = problem.reg_x.prox(
        state.x - (gam / problem.n) * state.w[i] * grad, gam
    )
    counters.prox_x_evals += 1
    state.k += 1


def sg_minibatch_step(
    problem: ProblemInstance,
    state: IterateState,
    schedule: StepSizeSchedule,
    b: int,
    q: float,
    rng,
    counters: EvalCounters,
    batch: Optional[np.ndarray] = None,
):
    """Plain minibatch step with the same w-step cadence as SMART.

    With probability q: the w-prox step. Otherwise: an x-step along
    (1/b) sum_{i in I} w_i grad f_i(x) with constant gamma and no variance
    reduction. ``batch`` overrides the draw (used by equivalence tests).
    """
    take_w_step = rng.random() < q
    if batch is None:
        batch = rng.integers(0, problem.n, size=b)
    if take_w_step:
        state.w = _w_step(problem, state, schedule, counters)
    else:
        weighted = weighted_batch_grads(problem, state, batch, counters)
        estimate = weighted.mean(axis=0)
        state.x = problem.reg_x.prox(
            state.x - schedule.gamma * estimate, schedule.gamma
        )
        counters.prox_x_evals += 1
    state.k += 1


def _baseline_run(problem, schedule, stop, x0, w0, seed, step_once):
    rng = np.random.default_rng(seed)
    x = problem.default_x0(rng) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    w = initial_weights(problem) if w0 is None else np.asarray(w0, dtype=float).copy()
    state = IterateState(w=w, x=x, k=0)
    counters = EvalCounters()
    # Stationarity weights at log points use the deterministic-variant plan.
    plan = SamplingPlan.full(problem.n, seed=seed)
    return _drive(
        problem, schedule, plan, stop, state, counters,
        lambda st: step_once(st, rng, counters),
    )


def run_palm(problem, schedule, stop, x0=None, w0=None, seed: int = 0):
    """Drive PALM to the stop rule; returns (RunRecord, final state)."""
    return _baseline_run(
        problem, schedule, stop, x0, w0, seed,
        lambda st, rng, counters: palm_step(problem, st, schedule, counters),
    )


def run_pspg(problem, schedule, stop, x0=None, w0=None, seed: int = 0):
    """Drive PSPG (decaying single-sample x-steps) to the stop rule."""
    return _baseline_run(
        problem, schedule, stop, x0, w0, seed,
        lambda st, rng, counters: pspg_step(problem, st, st.k, schedule, rng, counters),
    )


def run_sg(problem, plan, schedule, stop, x0=None, w0=None):
    """Drive minibatch SG with the plan's batch size, q, and seed."""
    return _baseline_run(
        problem, schedule, stop, x0, w0, plan.seed,
        lambda st, rng, counters: sg_minibatch_step(
            problem, st, schedule, plan.b, plan.q, rng, counters
        ),
    )
