import numpy as np
import pytest

from trimfit.core import CappedSimplex, ProblemInstance, Zero


def make_quadratic(curvatures, targets, h=None, reg_x=None):
    """Tiny 1-d test problem: f_i(x) = 0.5 c_i (x - t_i)^2."""
    c = np.asarray(curvatures, dtype=float)
    t = np.asarray(targets, dtype=float)
    n = c.size
    reg_w = CappedSimplex(n if h is None else h)
    return ProblemInstance(
        n=n,
        x_shape=(1,),
        loss_eval=lambda i, x: 0.5 * c[i] * (x[0] - t[i]) ** 2,
        grad_eval=lambda i, x: np.array([c[i] * (x[0] - t[i])]),
        lipschitz=c,
        weight_bounds=np.ones(n),
        reg_w=reg_w,
        reg_x=reg_x if reg_x is not None else Zero(),
    )


@pytest.fixture
def quad_factory():
    return make_quadratic
