"""Ensemble transform Kalman filter with multiplicative inflation, closed-form
error bounds, and a twin-experiment harness."""

from ._kernels import BACKEND
from .analysis import (
    AnalysisOutput,
    NoiseCovariance,
    ObservationOperator,
    analysis_min_eigenvalue_map,
    analysis_step_covariance_form,
    analysis_step_transform_form,
    inflate,
    kalman_gain,
    mean_update,
    min_eigenvalue,
    symmetric_inverse_sqrt,
    transform_matrix,
)
from .bounds import BoundParams, DerivedConstants, derive_constants
from .config import RunConfig, resolve_constants
from .dynamics import FlowConfig, LinearTest, Lorenz63, Lorenz96, flow, predict_ensemble, rhs
from .ensemble import Ensemble, covariance, deviations, l2_norm, mean
from .harness import (
    ErrorTrace,
    MonteCarloSummary,
    check_uniform_bound,
    check_wellposedness,
    export_trace,
    run_filter,
    run_monte_carlo,
)
from .identities import verify_identities
from .observation import NoiseStream, observe

__version__ = "0.1.0"
