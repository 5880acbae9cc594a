"""trimfit: variance-reduced stochastic proximal-gradient solver for jointly
trimming outliers and fitting models, with SAGA/SVRG/full variants and
PALM/PSPG/SG baselines."""

from .core import (
    AllOnes,
    CappedSimplex,
    EvalCounters,
    FrobeniusSphere,
    InfeasiblePointError,
    IterateState,
    LogRow,
    ProblemInstance,
    Ridge,
    RunRecord,
    Stiefel,
    Zero,
    objective,
)
from .estimator import DualTable, dual_residuals, refresh_all, update_subset, vr_gradient
from .prox import (
    DegenerateProjectionError,
    project_capped_simplex,
    project_frobenius_sphere,
    project_stiefel,
    prox_indicator_all_ones,
    prox_ridge,
)
from .problems import (
    InsufficientInliersError,
    TRIM_TOL,
    TrimmedHomography,
    TrimmedLS,
    TrimmedPCA,
    TrimmedSoftmax,
    dlt_homography,
    grad_softmax_example,
    homography_alignment_error,
    homography_loss_and_grad,
    lse,
    pca_loss_and_grad,
    refine_homography,
    softmax,
)
from .smart import (
    NonFiniteObjectiveError,
    SamplingPlan,
    StepSizeSchedule,
    StopRule,
    default_batch_size,
    palm_step,
    pspg_step,
    run,
    run_palm,
    run_pspg,
    run_sg,
    sg_minibatch_step,
    smart_step,
    theory_schedule,
)
from .stationarity import error_bound_probe, reference_step, stationarity_measure
from .stepsize import (
    InvalidPlanError,
    eta_linear,
    eta_sublinear,
    gamma_linear,
    gamma_sublinear,
    rho_for_policy,
    tau_for_variant,
)

__version__ = "0.1.0"
