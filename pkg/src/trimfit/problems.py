"""The application problems: trimmed least squares, soft-max classification,
PCA with column trimming, and robust homography estimation.

Each dataset class exposes per-example losses f_i, gradients, Lipschitz
bounds L_i, and its regularizer pair via ``build()``, which returns the
generic problem container consumed by the solvers. Batch evaluators are
vectorized; the model variable is always flat with shape metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CappedSimplex,
    FrobeniusSphere,
    IterateState,
    ProblemInstance,
    Ridge,
    Stiefel,
    Zero,
)
from .prox import DegenerateProjectionError

#: Weights at or below this value mark an example as trimmed (an outlier).
TRIM_TOL = 1e-8


class InsufficientInliersError(RuntimeError):
    """Fewer kept correspondences than the refinement needs."""


# ---------------------------------------------------------------------------
# Soft-max pieces.
# ---------------------------------------------------------------------------


def lse(z: np.ndarray) -> float:
    """log(sum(exp(z))), shift-stabilized so large inputs cannot overflow."""
    z = np.asarray(z, dtype=float)
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()))


def softmax(z: np.ndarray) -> np.ndarray:
    """Gradient of lse: exp(z - max) normalized to sum to one."""
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def grad_softmax_example(X: np.ndarray, v: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of lse(X^T v) - v^T X y with respect to the p x K matrix X."""
    probs = softmax(X.T @ v)
    return np.outer(v, probs - y)


# ---------------------------------------------------------------------------
# PCA pieces.
# ---------------------------------------------------------------------------


def pca_loss_and_grad(U: np.ndarray, a: np.ndarray):
    """Column loss 0.5||a||^2 - 0.5||U^T a||^2 and its gradient -a a^T U.

    The loss identity requires orthonormal columns; when ||U^T U - I|| > 1e-8
    the residual form 0.5||(I - U U^T) a||^2 is evaluated instead and the
    returned flag is False.
    """
    U = np.asarray(U, dtype=float)
    a = np.asarray(a, dtype=float)
    proj = U.T @ a
    on_manifold = np.linalg.norm(U.T @ U - np.eye(U.shape[1])) <= 1e-8
    if on_manifold:
        loss = 0.5 * float(a @ a) - 0.5 * float(proj @ proj)
    else:
        resid = a - U @ proj
        loss = 0.5 * float(resid @ resid)
    return loss, -np.outer(a, proj), on_manifold


# ---------------------------------------------------------------------------
# Homography pieces.
# ---------------------------------------------------------------------------


def homography_loss_and_grad(H: np.ndarray, b1: np.ndarray, b2: np.ndarray):
    """Transfer residual ||H b1 - b2||^2 and its gradient 2 (H b1 - b2) b1^T."""
    H = np.asarray(H, dtype=float)
    r = H @ b1 - b2
    return float(r @ r), 2.0 * np.outer(r, b1)


def dlt_homography(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Homography from exactly 4 correspondences by direct linear transformation.

    Stacks the standard two constraint rows per pair into an 8 x 9 system and
    returns the right singular vector of the smallest singular value,
    reshaped 3 x 3, unit Frobenius norm, sign fixed so the largest-magnitude
    entry is positive. Degenerate configurations (the two smallest singular
    values within 1e-10 of each other) make the solution non-unique.
    """
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if b1.shape != (4, 3) or b2.shape != (4, 3):
        raise ValueError("expected exactly 4 homogeneous correspondences per side")
    rows = []
    for (x, y, s), (u, v, t) in zip(b1, b2):
        rows.append([0, 0, 0, -t * x, -t * y, -t * s, v * x, v * y, v * s])
        rows.append([t * x, t * y, t * s, 0, 0, 0, -u * x, -u * y, -u * s])
    _, sing, vt = np.linalg.svd(np.array(rows, dtype=float), full_matrices=True)
    # The 8 x 9 system always has one null direction (vt[-1]); a second one
    # appears exactly when the returned smallest singular value vanishes too,
    # i.e. the two smallest singular values of the stacked system coincide.
    if sing[-1] < 1e-10:
        raise DegenerateProjectionError(
            "degenerate correspondence configuration: homography not unique "
            f"(smallest two singular values within {sing[-1]:.3e} of each other)"
        )
    h = vt[-1]
    top = np.argmax(np.abs(h))
    if h[top] < 0:
        h = -h
    return h.reshape(3, 3)


def homography_alignment_error(h_est: np.ndarray, h_true: np.ndarray) -> float:
    """Relative Frobenius distance after aligning scale and sign."""
    a = np.asarray(h_est, dtype=float).ravel()
    b = np.asarray(h_true, dtype=float).ravel()
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    sign = 1.0 if a @ b >= 0 else -1.0
    return float(np.linalg.norm(a - sign * b))


# ---------------------------------------------------------------------------
# Dataset classes.
# ---------------------------------------------------------------------------


@dataclass
class TrimmedLS:
    """Least-squares rows with joint selection of the h best-fitting examples."""

    features: np.ndarray  # (n, p)
    targets: np.ndarray  # (n,)
    h: float
    ridge: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2 or self.targets.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, p) with matching length-n targets")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def build(self) -> ProblemInstance:
        A, b, n = self.features, self.targets, self.n

        def batch_loss(idx, x):
            r = A[idx] @ x - b[idx]
            return 0.5 * r * r

        def batch_grad(idx, x):
            r = A[idx] @ x - b[idx]
            return A[idx] * r[:, None]

        reg_x = Ridge(self.ridge / n) if self.ridge > 0 else Zero()
        return ProblemInstance(
            n=n,
            x_shape=(A.shape[1],),
            loss_eval=lambda i, x: float(batch_loss(np.array([i]), x)[0]),
            grad_eval=lambda i, x: batch_grad(np.array([i]), x)[0],
            lipschitz=np.einsum("ij,ij->i", A, A),
            weight_bounds=np.ones(n),
            reg_w=CappedSimplex(self.h),
            reg_x=reg_x,
            batch_loss=batch_loss,
            batch_grad=batch_grad,
        )


@dataclass
class TrimmedSoftmax:
    """Multiclass soft-max classification with label trimming; X is p x K flat."""

    features: np.ndarray  # (n, p)
    labels: np.ndarray  # (n,) integers in 0..K-1
    num_classes: int
    h: float
    ridge: float = 0.0
    onehot: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels must be one integer per feature row")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels must lie in 0..num_classes-1")
        self.onehot = np.zeros((n, self.num_classes))
        self.onehot[np.arange(n), self.labels] = 1.0

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def build(self) -> ProblemInstance:
        V, Y, n = self.features, self.onehot, self.n
        p, K = V.shape[1], self.num_classes

        def batch_loss(idx, x):
            Z = V[idx] @ x.reshape(p, K)
            m = Z.max(axis=1)
            lse_rows = m + np.log(np.exp(Z - m[:, None]).sum(axis=1))
            return lse_rows - Z[np.arange(len(idx)), self.labels[idx]]

        def batch_grad(idx, x):
            Z = V[idx] @ x.reshape(p, K)
            e = np.exp(Z - Z.max(axis=1)[:, None])
            probs = e / e.sum(axis=1)[:, None]
            G = V[idx][:, :, None] * (probs - Y[idx])[:, None, :]
            return G.reshape(len(idx), p * K)

        reg_x = Ridge(self.ridge / n) if self.ridge > 0 else Zero()
        return ProblemInstance(
            n=n,
            x_shape=(p, K),
            loss_eval=lambda i, x: float(batch_loss(np.array([i]), x)[0]),
            grad_eval=lambda i, x: batch_grad(np.array([i]), x)[0],
            lipschitz=np.einsum("ij,ij->i", V, V),
            weight_bounds=np.ones(n),
            reg_w=CappedSimplex(self.h),
            reg_x=reg_x,
            batch_loss=batch_loss,
            batch_grad=batch_grad,
        )

    def accuracy(self, x: np.ndarray, features=None, labels=None) -> float:
        """Fraction of examples whose largest logit matches the label."""
        V = self.features if features is None else np.asarray(features, dtype=float)
        y = self.labels if labels is None else np.asarray(labels, dtype=int)
        Z = V @ x.reshape(self.features.shape[1], self.num_classes)
        return float((Z.argmax(axis=1) == y).mean())


@dataclass
class TrimmedPCA:
    """Rank-k subspace fit that discards the worst-explained data columns."""

    columns: np.ndarray  # (m, n): n data columns of length m
    rank: int
    h: float

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=float)
        if self.columns.ndim != 2:
            raise ValueError("columns must be an m x n matrix")
        if not 1 <= self.rank <= self.columns.shape[0]:
            raise ValueError("rank must lie in 1..m")

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    @property
    def m(self) -> int:
        return self.columns.shape[0]

    def svd_basis(self) -> np.ndarray:
        """Top-rank left singular vectors, the standard initialization."""
        u, _, _ = np.linalg.svd(self.columns, full_matrices=False)
        return u[:, : self.rank]

    def build(self) -> ProblemInstance:
        A, m, k, n = self.columns, self.m, self.rank, self.n
        col_sq = np.einsum("ij,ij->j", A, A)

        def batch_loss(idx, x):
            proj = A[:, idx].T @ x.reshape(m, k)
            return 0.5 * col_sq[idx] - 0.5 * np.einsum("ij,ij->i", proj, proj)

        def batch_grad(idx, x):
            cols = A[:, idx]
            proj = cols.T @ x.reshape(m, k)
            G = -cols.T[:, :, None] * proj[:, None, :]
            return G.reshape(len(idx), m * k)

        return ProblemInstance(
            n=n,
            x_shape=(m, k),
            loss_eval=lambda i, x: float(batch_loss(np.array([i]), x)[0]),
            grad_eval=lambda i, x: batch_grad(np.array([i]), x)[0],
            lipschitz=col_sq,
            weight_bounds=np.ones(n),
            reg_w=CappedSimplex(self.h),
            reg_x=Stiefel(m, k),
            batch_grad=batch_grad,
            batch_loss=batch_loss,
            initial_x=lambda rng: self.svd_basis().ravel(),
        )

    def svd_optimal_value(self) -> float:
        """sum_i f_i at the best rank-k subspace: 0.5 sum||a_i||^2 - 0.5 sum_{j<=k} s_j^2."""
        s = np.linalg.svd(self.columns, compute_uv=False)
        total = 0.5 * float(np.einsum("ij,ij->", self.columns, self.columns))
        return total - 0.5 * float((s[: self.rank] ** 2).sum())


@dataclass
class TrimmedHomography:
    """Point-correspondence trimming under the unit-Frobenius-norm constraint."""

    b1: np.ndarray  # (n, 3), third coordinate 1
    b2: np.ndarray  # (n, 3), third coordinate 1
    h: float

    def __post_init__(self):
        self.b1 = np.asarray(self.b1, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        if self.b1.shape != self.b2.shape or self.b1.ndim != 2 or self.b1.shape[1] != 3:
            raise ValueError("correspondences must be two matching (n, 3) arrays")
        for name, arr in (("b1", self.b1), ("b2", self.b2)):
            if np.max(np.abs(arr[:, 2] - 1.0)) > 1e-12:
                raise ValueError(f"{name} third coordinates must equal 1")

    @property
    def n(self) -> int:
        return self.b1.shape[0]

    def build(self) -> ProblemInstance:
        B1, B2, n = self.b1, self.b2, self.n

        def batch_loss(idx, x):
            R = B1[idx] @ x.reshape(3, 3).T - B2[idx]
            return np.einsum("ij,ij->i", R, R)

        def batch_grad(idx, x):
            R = B1[idx] @ x.reshape(3, 3).T - B2[idx]
            G = 2.0 * R[:, :, None] * B1[idx][:, None, :]
            return G.reshape(len(idx), 9)

        return ProblemInstance(
            n=n,
            x_shape=(3, 3),
            loss_eval=lambda i, x: float(batch_loss(np.array([i]), x)[0]),
            grad_eval=lambda i, x: batch_grad(np.array([i]), x)[0],
            lipschitz=2.0 * np.einsum("ij,ij->i", B1, B1),
            weight_bounds=np.ones(n),
            reg_w=CappedSimplex(self.h),
            reg_x=FrobeniusSphere(),
            batch_loss=batch_loss,
            batch_grad=batch_grad,
            initial_x=self._dlt_from_random_four,
        )

    def _dlt_from_random_four(self, rng) -> np.ndarray:
        for _ in range(32):
            pick = rng.choice(self.n, size=4, replace=False)
            try:
                return dlt_homography(self.b1[pick], self.b2[pick]).ravel()
            except DegenerateProjectionError:
                continue
        raise DegenerateProjectionError(
            "could not find four non-degenerate correspondences to initialize from"
        )


def refine_homography(state: IterateState, dataset: TrimmedHomography) -> np.ndarray:
    """Refit from the 4 best-fitting kept correspondences of a solved state.

    Kept means w_i above the trimming tolerance; best-fitting means lowest
    transfer residual at the solved matrix, ties broken by lower index.
    """
    kept = np.flatnonzero(state.w > TRIM_TOL)
    if kept.size < 4:
        raise InsufficientInliersError(
            f"refinement needs 4 kept correspondences, only {kept.size} remain"
        )
    problem = dataset.build()
    losses = problem.losses(kept, state.x)
    best = kept[np.argsort(losses, kind="stable")[:4]]
    return dlt_homography(dataset.b1[best], dataset.b2[best])
