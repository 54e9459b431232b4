"""Minimum density power divergence inference for interval-monitored
Weibull step-stress life tests under the cumulative exposure model."""

from .divergence import FailureCounts, J_matrix, K_matrix, beta_score, divergence, dpd_loss, kl_loss
from .errors import (
    BoundaryWarning,
    DomainError,
    NonConvergenceError,
    NumericalError,
    ProbabilityFloorWarning,
    SingularMatrixError,
    StepStressError,
)
from .estimation import (
    Constraint,
    FitOptions,
    FitResult,
    asymptotic_covariance,
    confidence_region_test,
    fit_mdpde,
    fit_rmdpde,
    wald_intervals,
)
from .inference import (
    PerturbationPoint,
    TestResult,
    influence_restricted,
    influence_unrestricted,
    rao_statistic,
    run_rao_test,
)
from .model import (
    InspectionGrid,
    ModelParams,
    StressPlan,
    cdf_T,
    cell_probabilities,
    jacobian_W,
    log_likelihood,
    mttf,
    shifting_times,
)
from .special import chi2_quantile, z_upper

__version__ = "0.1.0"
