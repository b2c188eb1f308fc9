"""Phase-function estimation for linear errors-in-variables regression."""

from .ecf import (
    FrequencyGrid,
    WeightKernel,
    WeightSpec,
    ecf,
    empirical_phase,
    empirical_phase_lincomb,
    integrate,
    kernel_weight,
    phi_K,
    phi_K_closed,
    select_t_star,
)
from .errors import *  # noqa: F401,F403
from .estimator import (
    CoefficientVector,
    FitOptions,
    FitResult,
    RegressionData,
    distance_direct,
    distance_quadsum,
    distance_simplified,
    fit_disattenuated,
    fit_naive,
    fit_phase,
    gradient,
    hessian,
    sample_odd_cumulants,
    variance_components,
)

__version__ = "0.1.0"
