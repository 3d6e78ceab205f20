"""Dense joint-Gaussian reference computations, for verification only.

Everything here materializes the full prior over all stacked states and
conditions on every measurement with textbook dense linear algebra.  It
exists to cross-check the square-root passes and the likelihood, and it is
deliberately naive; a size guard keeps it at test scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConditioningError
from .kalman import ModelParams
from .model import check_order, process_noise_base, transition_matrix
from .series import TimeSeries

MAX_STACKED = 400

_LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class JointGaussian:
    """Mean and dense covariance of all states stacked in abscissa order."""

    mean: np.ndarray
    cov: np.ndarray


def build_joint_prior(ts: TimeSeries, params: ModelParams, order: int) -> JointGaussian:
    """Exact prior over the stacked states, blockwise by recursion."""
    order = check_order(order)
    t = ts.abscissas
    t_count = t.size
    dim = t_count * order
    if dim > MAX_STACKED:
        raise ValueError(f"stacked dimension {dim} exceeds the verification guard {MAX_STACKED}")

    mean = np.zeros(dim)
    cov = np.zeros((dim, dim))
    mean[:order] = params.m0
    cov[:order, :order] = params.p0_factor @ params.p0_factor.T
    for k in range(t_count - 1):
        dt = float(t[k + 1] - t[k])
        a = transition_matrix(order, dt).a
        qbar = process_noise_base(order, dt).qbar
        here = slice(k * order, (k + 1) * order)
        nxt = slice((k + 1) * order, (k + 2) * order)
        mean[nxt] = a @ mean[here]
        cov[nxt, nxt] = a @ cov[here, here] @ a.T + params.q * qbar
        for j in range(k + 1):
            prev = slice(j * order, (j + 1) * order)
            block = cov[prev, here] @ a.T
            cov[prev, nxt] = block
            cov[nxt, prev] = block.T
    return JointGaussian(mean=mean, cov=0.5 * (cov + cov.T))


def _selection(ts: TimeSeries, order: int):
    cols = []
    for k, group in enumerate(ts.measurements):
        cols.extend([k * order] * group.size)
    return np.asarray(cols, dtype=int), ts.all_values()


def condition_on_measurements(jg: JointGaussian, ts: TimeSeries, r: float) -> JointGaussian:
    """Condition the stacked states on every measurement at once."""
    r = float(r)
    if not r > 0.0:
        raise ValueError(f"measurement variance must be positive, got {r}")
    order = jg.mean.size // ts.abscissas.size
    cols, y = _selection(ts, order)
    if y.size < 1:
        raise ValueError("conditioning needs at least one measurement")
    cov_xy = jg.cov[:, cols]
    innov_cov = jg.cov[np.ix_(cols, cols)] + r * np.eye(y.size)
    try:
        chol = np.linalg.cholesky(innov_cov)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("singular innovation covariance") from exc
    gain = cho_solve((chol, True), cov_xy.T).T
    mean = jg.mean + gain @ (y - jg.mean[cols])
    cov = jg.cov - gain @ cov_xy.T
    return JointGaussian(mean=mean, cov=0.5 * (cov + cov.T))


def nll_direct(ts: TimeSeries, params: ModelParams, order: int) -> float:
    """Negative log density of the stacked measurement vector, evaluated
    densely; the independent check of the filter's likelihood."""
    jg = build_joint_prior(ts, params, order)
    cols, y = _selection(ts, order)
    if y.size < 1:
        raise ValueError("likelihood needs at least one measurement")
    marg_cov = jg.cov[np.ix_(cols, cols)] + params.r * np.eye(y.size)
    try:
        chol = np.linalg.cholesky(marg_cov)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("marginal measurement covariance is not positive definite") from exc
    white = np.linalg.solve(chol, y - jg.mean[cols])
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(chol))))
    return 0.5 * (y.size * _LOG_TWO_PI + logdet + float(white @ white))
