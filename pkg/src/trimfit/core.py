"""Domain types shared by all modules and evaluation of the composite objective.

The objective being minimized is

    F(w, x) = (1/n) * sum_i w_i * f_i(x) + r1(w) + r2(x)

over a weight vector w of length n and a flat model variable x of length d
(with optional matrix-shape metadata). Regularizers r1/r2 are descriptor
objects exposing ``value`` and ``prox``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .prox import (
    project_capped_simplex,
    project_frobenius_sphere,
    project_stiefel,
    prox_indicator_all_ones,
    prox_ridge,
)

#: Tolerance on constraint residuals when deciding feasibility of an indicator.
FEAS_TOL = 1e-9


class InfeasiblePointError(ValueError):
    """The iterate lies outside an indicator regularizer's domain (F is infinite)."""


# ---------------------------------------------------------------------------
# Regularizer descriptors.  Each exposes:
#   value(z) -> 0.0 or math.inf (indicators) / penalty value (smooth ones)
#   prox(z, step) -> argmin r(z') + ||z' - z||^2 / (2 step)
#   prox_guard -> upper bound on admissible prox steps (inf when global)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CappedSimplex:
    """Indicator of {w in [0,1]^n : sum(w) = h}; the trimming regularizer."""

    h: float
    prox_guard: float = math.inf

    def value(self, w):
        w = np.asarray(w, dtype=float)
        ok = (
            w.min(initial=0.0) >= -FEAS_TOL
            and w.max(initial=1.0) <= 1.0 + FEAS_TOL
            and abs(w.sum() - self.h) <= max(FEAS_TOL, FEAS_TOL * abs(self.h))
        )
        return 0.0 if ok else math.inf

    def prox(self, w, step):
        return project_capped_simplex(w, self.h)


@dataclass(frozen=True)
class AllOnes:
    """Indicator of the all-ones vector; forces every weight to 1 (no trimming)."""

    prox_guard: float = math.inf

    def value(self, w):
        w = np.asarray(w, dtype=float)
        return 0.0 if np.all(np.abs(w - 1.0) <= FEAS_TOL) else math.inf

    def prox(self, w, step):
        return prox_indicator_all_ones(w)


@dataclass(frozen=True)
class Ridge:
    """Quadratic penalty (coeff/2) * ||x||^2."""

    coeff: float
    prox_guard: float = math.inf

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.coeff * float(x @ x)

    def prox(self, x, step):
        return prox_ridge(x, step, self.coeff)


@dataclass(frozen=True)
class Stiefel:
    """Indicator of m x k matrices with orthonormal columns (stored flat)."""

    m: int
    k: int
    prox_guard: float = math.inf

    def value(self, x):
        u = np.asarray(x, dtype=float).reshape(self.m, self.k)
        resid = np.linalg.norm(u.T @ u - np.eye(self.k))
        return 0.0 if resid <= FEAS_TOL else math.inf

    def prox(self, x, step):
        u = np.asarray(x, dtype=float).reshape(self.m, self.k)
        return project_stiefel(u).ravel()


@dataclass(frozen=True)
class FrobeniusSphere:
    """Indicator of the unit Frobenius sphere ||x|| = 1."""

    prox_guard: float = math.inf

    def value(self, x):
        resid = abs(np.linalg.norm(np.asarray(x, dtype=float)) - 1.0)
        return 0.0 if resid <= FEAS_TOL else math.inf

    def prox(self, x, step):
        return project_frobenius_sphere(np.asarray(x, dtype=float).ravel())


@dataclass(frozen=True)
class Zero:
    """The zero regularizer; prox is the identity."""

    prox_guard: float = math.inf

    def value(self, x):
        return 0.0

    def prox(self, x, step):
        return np.asarray(x, dtype=float).copy()


# ---------------------------------------------------------------------------
# Problem container and iterate state.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemInstance:
    """A separable objective: per-example evaluators plus regularizer pair.

    ``loss_eval(i, x)`` and ``grad_eval(i, x)`` are the per-example contract
    (x flat, gradient flat of length d).  ``batch_loss(idx, x)`` and
    ``batch_grad(idx, x)`` are optional vectorized fast paths returning shape
    (m,) and (m, d) for an index array of length m; when absent a Python loop
    over the per-example maps is used.  Evaluators must be pure.
    """

    n: int
    x_shape: tuple
    loss_eval: Callable[[int, np.ndarray], float]
    grad_eval: Callable[[int, np.ndarray], np.ndarray]
    lipschitz: np.ndarray
    weight_bounds: np.ndarray
    reg_w: object
    reg_x: object
    batch_loss: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    batch_grad: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    initial_x: Optional[Callable[[np.random.Generator], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "lipschitz", np.asarray(self.lipschitz, dtype=float))
        object.__setattr__(
            self, "weight_bounds", np.asarray(self.weight_bounds, dtype=float)
        )
        if self.n < 1:
            raise ValueError(f"need at least one example, got n={self.n}")
        if self.dim < 1:
            raise ValueError(f"model dimension must be positive, got {self.x_shape}")
        if self.lipschitz.shape != (self.n,) or np.any(self.lipschitz <= 0):
            raise ValueError("lipschitz must be a length-n array of positive values")
        if self.weight_bounds.shape != (self.n,) or np.any(self.weight_bounds <= 0):
            raise ValueError("weight_bounds must be a length-n array of positive values")

    @property
    def dim(self) -> int:
        return int(np.prod(self.x_shape))

    @property
    def max_lipschitz(self) -> float:
        return float(self.lipschitz.max())

    def losses(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        if self.batch_loss is not None:
            return np.asarray(self.batch_loss(idx, x), dtype=float)
        return np.array([self.loss_eval(int(i), x) for i in idx], dtype=float)

    def grads(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        if self.batch_grad is not None:
            return np.asarray(self.batch_grad(idx, x), dtype=float)
        return np.stack([np.asarray(self.grad_eval(int(i), x), dtype=float).ravel() for i in idx])

    def all_losses(self, x: np.ndarray) -> np.ndarray:
        return self.losses(np.arange(self.n), x)

    def all_grads(self, x: np.ndarray) -> np.ndarray:
        return self.grads(np.arange(self.n), x)

    def default_x0(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if self.initial_x is not None:
            if rng is None:
                rng = np.random.default_rng(0)
            return np.asarray(self.initial_x(rng), dtype=float).ravel()
        return np.zeros(self.dim)


@dataclass
class IterateState:
    """Current primal pair (w, x) plus the iteration counter. Single writer."""

    w: np.ndarray
    x: np.ndarray
    k: int = 0

    def copy(self) -> "IterateState":
        return IterateState(self.w.copy(), self.x.copy(), self.k)


@dataclass
class EvalCounters:
    """Cumulative work counters mirroring the complexity accounting."""

    grad_evals: int = 0
    fun_evals: int = 0
    prox_w_evals: int = 0
    prox_x_evals: int = 0

    def snapshot(self) -> tuple:
        return (self.grad_evals, self.fun_evals, self.prox_w_evals, self.prox_x_evals)


@dataclass(frozen=True)
class LogRow:
    k: int
    epoch: float
    objective: float
    stat_weighted: float
    stat_w: float
    stat_x: float
    grad_evals: int
    fun_evals: int
    prox_w_evals: int
    prox_x_evals: int


@dataclass
class RunRecord:
    """Trajectory of logged objective/stationarity values and work counters."""

    rows: list = field(default_factory=list)
    best_objective: float = math.inf
    wall_time: float = 0.0

    def log(self, row: LogRow):
        self.rows.append(row)
        if row.objective < self.best_objective:
            self.best_objective = row.objective

    @property
    def final_row(self) -> LogRow:
        return self.rows[-1]


def objective(problem: ProblemInstance, state: IterateState) -> float:
    """Composite objective F(w, x); raises InfeasiblePointError off-domain.

    Indicator regularizers contribute 0 on their domain; an infeasible iterate
    is signalled by the exception rather than returning inf, so it cannot be
    confused with numeric overflow in the loss sum.
    """
    w = np.asarray(state.w, dtype=float)
    x = np.asarray(state.x, dtype=float)
    if w.shape != (problem.n,):
        raise ValueError(f"w has shape {w.shape}, expected ({problem.n},)")
    if x.size != problem.dim:
        raise ValueError(f"x has {x.size} entries, expected {problem.dim}")
    r1 = problem.reg_w.value(w)
    if math.isinf(r1):
        raise InfeasiblePointError("w is outside the domain of the weight regularizer")
    r2 = problem.reg_x.value(x)
    if math.isinf(r2):
        raise InfeasiblePointError("x is outside the domain of the model regularizer")
    return float(w @ problem.all_losses(x)) / problem.n + r1 + r2
