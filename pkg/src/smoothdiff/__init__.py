"""Smoothing and numerical differentiation of noisy time series.

The signal is modelled as a repeatedly integrated Wiener process observed
through additive Gaussian noise.  A square-root Kalman filter and
fixed-interval smoother recover the signal and its derivatives with
calibrated uncertainties, at the data abscissas or densely in between;
all model parameters are estimated from the data alone by maximum
likelihood (expectation-maximization).

Typical use::

    from smoothdiff import TimeSeries, fit

    series = TimeSeries.from_columns(t, y)
    report = fit(series, order=3)
    signal = report.smoothed.means[:, 0]
    velocity = report.smoothed.means[:, 1]
"""

from .errors import ConditioningError, FittingError
from .model import (
    MAX_ORDER,
    ProcessNoise,
    Transition,
    process_noise_base,
    transition_matrix,
)
from .series import TimeSeries
from .kalman import (
    ForwardRecord,
    ModelParams,
    SqrtGaussian,
    dynamic_update,
    forward_pass,
    measurement_update,
)
from .smoother import (
    DenseState,
    SmoothResult,
    backward_pass,
    dense_predict,
    interpolant_samples,
)
from .em import (
    EmConfig,
    FitReport,
    QSearch,
    em_objective,
    em_step,
    fit,
    init_params,
    minimize_q,
    qhat,
    rhat,
)

__version__ = "0.1.0"

__all__ = [
    "MAX_ORDER",
    "ConditioningError",
    "DenseState",
    "EmConfig",
    "FitReport",
    "FittingError",
    "ForwardRecord",
    "ModelParams",
    "ProcessNoise",
    "QSearch",
    "SmoothResult",
    "SqrtGaussian",
    "TimeSeries",
    "Transition",
    "backward_pass",
    "dense_predict",
    "dynamic_update",
    "em_objective",
    "em_step",
    "fit",
    "forward_pass",
    "init_params",
    "interpolant_samples",
    "measurement_update",
    "minimize_q",
    "process_noise_base",
    "qhat",
    "rhat",
    "transition_matrix",
]
