"""Square-root fixed-interval smoothing and dense (between-sample) output.

The backward pass never forms the inverse of a predicted covariance: the
gain comes from two triangular solves against its square-root factor, and
the smoothed factor from a QR of a stacked block matrix.  Dense output
re-discretizes the dynamics over the partial step, so querying a time
strictly inside an interval agrees with re-running the smoother on a grid
that contains the query point.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass

import numpy as np

from ._linalg import r_factor, spd_solve
from .errors import ConditioningError
from .kalman import ForwardRecord
from .model import process_noise_base, transition_matrix


@dataclass
class SmoothResult:
    """Posterior states given the whole series, plus the backward gains."""

    means: np.ndarray    # (T, d)
    factors: np.ndarray  # (T, d, d) lower triangular, nonnegative diagonal
    gains: np.ndarray    # (T-1, d, d)
    nll: float

    def covariances(self) -> np.ndarray:
        """Dense smoothed covariances, one per abscissa."""
        return np.einsum("kij,klj->kil", self.factors, self.factors)


@dataclass(frozen=True)
class DenseState:
    """Posterior at a query time strictly inside a sampling interval."""

    t: float
    mean: np.ndarray
    cov: np.ndarray


def backward_pass(fr: ForwardRecord) -> SmoothResult:
    """Correct the filtered states using all later measurements."""
    t_count, d = fr.filtered_means.shape
    means = np.empty((t_count, d))
    factors = np.empty((t_count, d, d))
    gains = np.empty((max(t_count - 1, 0), d, d))
    means[-1] = fr.filtered_means[-1]
    factors[-1] = fr.filtered_factors[-1]

    sqrt_q = math.sqrt(fr.params.q)
    stack = np.zeros((3 * d, 2 * d))
    for k in range(t_count - 2, -1, -1):
        a = fr.transitions[k].a
        lf = fr.filtered_factors[k]
        lp = fr.pred_factors[k]
        pf = lf @ lf.T
        try:
            gain = spd_solve(lp, a @ pf).T
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(
                f"singular one-step covariance factor at abscissa {k}"
            ) from exc
        means[k] = fr.filtered_means[k] + gain @ (means[k + 1] - fr.pred_means[k])

        stack[:d, :d] = (a @ lf).T
        stack[:d, d:] = lf.T
        stack[d : 2 * d, :d] = sqrt_q * fr.noises[k].qbar_chol.T
        stack[2 * d :, d:] = (gain @ factors[k + 1]).T
        rfac = r_factor(stack)
        factors[k] = rfac[d:, d:].T
        gains[k] = gain

    return SmoothResult(means=means, factors=factors, gains=gains, nll=fr.nll)


@dataclass(frozen=True)
class _Interval:
    # per-interval quantities shared by all dense queries inside it
    order: int
    q: float
    t_start: float
    dt: float
    mean_here: np.ndarray
    cov_here: np.ndarray
    pred_factor: np.ndarray
    mean_gap: np.ndarray
    cov_gap: np.ndarray


def _interval_context(fr: ForwardRecord, sr: SmoothResult, k: int) -> _Interval:
    k = operator.index(k)
    t_count = fr.filtered_means.shape[0]
    if not 0 <= k <= t_count - 2:
        raise ValueError(f"interval index must be in [0, {t_count - 2}], got {k}")
    lf = fr.filtered_factors[k]
    ls = sr.factors[k + 1]
    lp = fr.pred_factors[k]
    return _Interval(
        order=fr.order,
        q=fr.params.q,
        t_start=float(fr.series.abscissas[k]),
        dt=fr.transitions[k].dt,
        mean_here=fr.filtered_means[k],
        cov_here=lf @ lf.T,
        pred_factor=lp,
        mean_gap=sr.means[k + 1] - fr.pred_means[k],
        cov_gap=ls @ ls.T - lp @ lp.T,
    )


def _dense_at(ctx: _Interval, theta: float) -> DenseState:
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie strictly inside (0, 1), got {theta}")
    a_part = transition_matrix(ctx.order, theta * ctx.dt).a
    qbar_part = process_noise_base(ctx.order, theta * ctx.dt).qbar
    cov_part = a_part @ ctx.cov_here @ a_part.T + ctx.q * qbar_part
    a_rest = transition_matrix(ctx.order, (1.0 - theta) * ctx.dt).a
    try:
        gain = spd_solve(ctx.pred_factor, a_rest @ cov_part).T
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("singular one-step covariance factor") from exc
    mean = a_part @ ctx.mean_here + gain @ ctx.mean_gap
    cov = cov_part + gain @ ctx.cov_gap @ gain.T
    return DenseState(t=ctx.t_start + theta * ctx.dt, mean=mean, cov=0.5 * (cov + cov.T))


def dense_predict(
    fr: ForwardRecord, sr: SmoothResult, k: int, theta: float
) -> DenseState:
    """Posterior at the interior time ``t_k + theta * dt_k``, given all data.

    The forward prediction uses the dynamics re-discretized over the
    partial step ``theta * dt_k``; the backward correction uses the gain
    built from the remaining part of the step.  Extrapolation (theta at or
    beyond the interval ends) is rejected.
    """
    return _dense_at(_interval_context(fr, sr, k), theta)


def interpolant_samples(
    fr: ForwardRecord, sr: SmoothResult, k: int, thetas
) -> list[DenseState]:
    """Batch of dense_predict results sharing the per-interval precomputation."""
    ctx = _interval_context(fr, sr, k)
    return [_dense_at(ctx, theta) for theta in thetas]
