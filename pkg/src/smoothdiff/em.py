"""Maximum-likelihood parameter estimation by expectation-maximization.

Each iteration smooths the series at the current parameters and then
maximizes the resulting surrogate objective in closed form over all four
parameters.  Initialization fits a straight line through the head of the
series for the state and measurement variance, and grid-searches the
noise intensity on the exact likelihood, which usually leaves only a
handful of EM iterations to run.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ._linalg import solve_lower, trace_spd_solve
from .errors import ConditioningError, FittingError
from .kalman import ForwardRecord, ModelParams, forward_pass
from .model import check_order
from .series import TimeSeries
from .smoother import SmoothResult, backward_pass

_LOG_TWO_PI = math.log(2.0 * math.pi)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# relative width (in q) at which the golden-section refinement stops
_Q_REFINE_TOL = math.log10(1.0 + 1e-3)

# initial state covariance is this multiple of the data variance
_P0_SCALE = 1e-6


@dataclass(frozen=True)
class EmConfig:
    """Knobs for the fit loop; the defaults suit most series.

    ``rel_tol`` applies to the relative L2 change of the smoothed signal
    between iterations.  ``q_search_decades`` are log10 offsets of the
    initial intensity scan around a data-scaled center.  When ``fixed_r``
    is set, the measurement variance is pinned there and its update is
    skipped.
    """

    max_iters: int = 50
    rel_tol: float = 1e-3
    r_floor_scale: float = 1e-12
    q_search_decades: tuple[float, float] = (-8.0, 8.0)
    fixed_r: float | None = None

    def __post_init__(self):
        if operator.index(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0.0:
            raise ValueError("rel_tol must be positive")
        if not self.r_floor_scale > 0.0:
            raise ValueError("r_floor_scale must be positive")
        lo, hi = self.q_search_decades
        if not lo < hi:
            raise ValueError("q_search_decades must be an increasing pair")
        if self.fixed_r is not None and not self.fixed_r > 0.0:
            raise ValueError("fixed_r must be positive")


@dataclass
class FitReport:
    """Everything a fit produces beyond the parameters themselves."""

    params: ModelParams
    smoothed: SmoothResult
    forward: ForwardRecord
    nll_trace: list[float]
    iterations: int
    converged: bool
    q_scan_boundary: bool = False


class QSearch(NamedTuple):
    q: float
    hit_boundary: bool


def qhat(k: int, sr: SmoothResult, fr: ForwardRecord) -> np.ndarray:
    """Smoothed second moment of the step-k dynamics residual, symmetrized.

    This is the matrix whose scaled trace drives the intensity update; it
    is positive semidefinite up to roundoff.
    """
    k = operator.index(k)
    t_count = sr.means.shape[0]
    if not 0 <= k <= t_count - 2:
        raise ValueError(f"step index must be in [0, {t_count - 2}], got {k}")
    return _qhat_core(fr, sr, k)


def _qhat_core(fr: ForwardRecord, sr: SmoothResult, k: int) -> np.ndarray:
    a = fr.transitions[k].a
    gain = sr.gains[k]
    f_next = sr.factors[k + 1]
    f_here = sr.factors[k]
    p_next = f_next @ f_next.T
    resid = sr.means[k + 1] - a @ sr.means[k]
    cross = a @ gain @ p_next
    out = np.outer(resid, resid) + p_next - cross - cross.T + a @ (f_here @ f_here.T) @ a.T
    return 0.5 * (out + out.T)


def rhat(k: int, j: int, y: float, sr: SmoothResult) -> float:
    """Smoothed second moment of measurement (k, j)'s residual.

    The value depends on ``j`` only through ``y``; the index is kept for
    bookkeeping symmetry with the innovation records.
    """
    k = operator.index(k)
    operator.index(j)
    m0 = sr.means[k, 0]
    p00 = float(sr.factors[k, 0] @ sr.factors[k, 0])
    return (float(y) - m0) ** 2 + p00


@dataclass
class _EmStats:
    # sufficient statistics of one smoothing pass, enough to maximize the
    # surrogate objective or evaluate it at arbitrary parameters
    order: int
    steps: int
    n_total: int
    nll: float
    var_y: float
    m1: np.ndarray
    p1_factor: np.ndarray
    tr_terms: np.ndarray
    logdet_qbar: np.ndarray
    rhat_values: np.ndarray


def _stats_from(fr: ForwardRecord, sr: SmoothResult) -> _EmStats:
    ts = fr.series
    t_count = sr.means.shape[0]
    tr_terms = np.empty(t_count - 1)
    logdet_qbar = np.empty(t_count - 1)
    for k in range(t_count - 1):
        lq = fr.noises[k].qbar_chol
        tr_terms[k] = trace_spd_solve(lq, _qhat_core(fr, sr, k))
        logdet_qbar[k] = 2.0 * float(np.sum(np.log(np.diagonal(lq))))

    rhats = []
    for k in range(t_count):
        group = ts.measurements[k]
        if group.size == 0:
            continue
        m0 = sr.means[k, 0]
        p00 = float(sr.factors[k, 0] @ sr.factors[k, 0])
        for y in group:
            rhats.append((float(y) - m0) ** 2 + p00)

    values = ts.all_values()
    return _EmStats(
        order=fr.order,
        steps=t_count - 1,
        n_total=int(values.size),
        nll=fr.nll,
        var_y=float(np.var(values)),
        m1=sr.means[0],
        p1_factor=sr.factors[0],
        tr_terms=tr_terms,
        logdet_qbar=logdet_qbar,
        rhat_values=np.asarray(rhats),
    )


def _chol_psd(p: np.ndarray) -> np.ndarray:
    p = 0.5 * (p + p.T)
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * float(np.trace(p))
    if jitter <= 0.0:
        raise ConditioningError("smoothed initial covariance has nonpositive trace")
    try:
        return np.linalg.cholesky(p + jitter * np.eye(p.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            "smoothed initial covariance is not positive semidefinite"
        ) from exc


def _maximize(stats: _EmStats, cfg: EmConfig) -> ModelParams:
    if stats.steps < 1:
        raise FittingError("parameter update needs at least two abscissas")
    q_new = float(np.mean(stats.tr_terms)) / stats.order
    if not (math.isfinite(q_new) and q_new > 0.0):
        raise RuntimeError(f"noise-intensity update produced {q_new}; this should be impossible")
    if cfg.fixed_r is not None:
        r_new = float(cfg.fixed_r)
    else:
        r_new = max(float(np.mean(stats.rhat_values)), cfg.r_floor_scale * stats.var_y)
        if not r_new > 0.0:
            raise FittingError("measurement-variance update collapsed to zero")
    return ModelParams(
        q=q_new,
        r=r_new,
        m0=np.array(stats.m1),
        p0_factor=_chol_psd(stats.p1_factor @ stats.p1_factor.T),
    )


def em_step(
    ts: TimeSeries, params: ModelParams, order: int, config: EmConfig | None = None
) -> ModelParams:
    """One EM update: a smoothing pass at ``params`` followed by the
    closed-form parameter maximization."""
    cfg = config if config is not None else EmConfig()
    order = check_order(order)
    if len(ts) < 2:
        raise ValueError("EM update needs at least two abscissas")
    fr = forward_pass(ts, params, order)
    sr = backward_pass(fr)
    return _maximize(_stats_from(fr, sr), cfg)


def em_objective(
    theta: ModelParams, theta_hat: ModelParams, ts: TimeSeries, order: int
) -> float:
    """Surrogate objective: expected complete-data log density of ``theta``
    under the smoothing posterior computed at ``theta_hat``.

    The parameter update returned by :func:`em_step` maximizes this
    function over ``theta``, which is what guarantees that the negative
    log-likelihood never increases across iterations.
    """
    order = check_order(order)
    fr = forward_pass(ts, theta_hat, order)
    sr = backward_pass(fr)
    return _objective_value(theta, _stats_from(fr, sr))


def _objective_value(theta: ModelParams, stats: _EmStats) -> float:
    diag = np.diagonal(theta.p0_factor)
    if np.any(diag <= 0.0):
        raise ConditioningError("initial covariance of the evaluated parameters is singular")
    err = stats.m1 - theta.m0
    white_err = solve_lower(theta.p0_factor, err)
    white_p1 = solve_lower(theta.p0_factor, stats.p1_factor)
    total = -0.5 * (
        stats.order * _LOG_TWO_PI
        + 2.0 * float(np.sum(np.log(diag)))
        + float(np.sum(white_p1 * white_p1))
        + float(white_err @ white_err)
    )
    if stats.steps:
        total -= 0.5 * (
            stats.steps * stats.order * (_LOG_TWO_PI + math.log(theta.q))
            + float(np.sum(stats.logdet_qbar))
            + float(np.sum(stats.tr_terms)) / theta.q
        )
    if stats.n_total:
        total -= 0.5 * (
            stats.n_total * (_LOG_TWO_PI + math.log(theta.r))
            + float(np.sum(stats.rhat_values)) / theta.r
        )
    return float(total)


def _data_scale(values: np.ndarray) -> float:
    scale = float(np.var(values))
    if scale <= 0.0:
        # constant data: fall back to its magnitude so floors stay positive
        scale = max(1.0, float(np.mean(values)) ** 2)
    return scale


def _line_init(ts: TimeSeries, order: int, cfg: EmConfig):
    values = ts.all_values()
    if values.size < 2:
        raise FittingError("initialization needs at least two measurements")
    head = min(10, len(ts))
    tt, yy = [], []
    for k in range(head):
        for y in ts.measurements[k]:
            tt.append(ts.abscissas[k])
            yy.append(float(y))
    if len(yy) < 2:
        # the head of the grid carries no data; fall back to the full series
        tt, yy = [], []
        for k in range(len(ts)):
            for y in ts.measurements[k]:
                tt.append(ts.abscissas[k])
                yy.append(float(y))
    x = np.asarray(tt) - ts.abscissas[0]
    yy = np.asarray(yy)
    if np.unique(x).size < 2:
        intercept, slope = float(np.mean(yy)), 0.0
    else:
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design, yy, rcond=None)
        intercept, slope = float(coef[0]), float(coef[1])
    resid = yy - (intercept + slope * x)
    res_var = float(np.mean(resid * resid))

    scale = _data_scale(values)
    if cfg.fixed_r is not None:
        r0 = float(cfg.fixed_r)
    else:
        r0 = max(res_var, cfg.r_floor_scale * scale)
    m0 = np.zeros(order)
    m0[0] = intercept
    if order > 1:
        m0[1] = slope
    p0_factor = math.sqrt(_P0_SCALE * scale) * np.eye(order)
    return m0, r0, p0_factor, scale


def init_params(ts: TimeSeries, order: int, config: EmConfig | None = None) -> ModelParams:
    """Starting parameters: a line fit through the head of the series for
    the state and measurement variance, a likelihood scan for the noise
    intensity, and a small multiple of the data variance for the initial
    covariance."""
    cfg = config if config is not None else EmConfig()
    order = check_order(order)
    m0, r0, p0_factor, _ = _line_init(ts, order, cfg)
    seed = ModelParams(q=1.0, r=r0, m0=m0, p0_factor=p0_factor)
    search = minimize_q(ts, seed, order, cfg.q_search_decades)
    return replace(seed, q=search.q)


def _golden(f, lo: float, hi: float, tol: float) -> float:
    width = hi - lo
    left = hi - _INV_PHI * width
    right = lo + _INV_PHI * width
    f_left, f_right = f(left), f(right)
    while width > tol:
        if f_left < f_right:
            hi, right, f_right = right, left, f_left
            width = hi - lo
            left = hi - _INV_PHI * width
            f_left = f(left)
        else:
            lo, left, f_left = left, right, f_right
            width = hi - lo
            right = lo + _INV_PHI * width
            f_right = f(right)
    return 0.5 * (lo + hi)


def minimize_q(
    ts: TimeSeries,
    partial: ModelParams,
    order: int,
    decades: tuple[float, float] = (-8.0, 8.0),
) -> QSearch:
    """Minimize the negative log-likelihood over the noise intensity alone.

    A 17-point scan over ``decades`` (log10 offsets around a data-scaled
    center) brackets the minimum, then golden-section refines it to 0.1%
    relative width.  A minimum on the scan edge is returned as-is with
    ``hit_boundary`` set.
    """
    order = check_order(order)
    t = ts.abscissas
    if t.size < 2:
        raise FittingError("intensity search needs at least two abscissas")
    span = float(t[-1] - t[0])
    # candidates are dimensionless multiples of a data-scaled center, so the
    # search commutes exactly with rescalings of the measurements
    q_center = _data_scale(ts.all_values()) / span ** (2 * order - 1)
    lo, hi = decades
    offsets = np.linspace(lo, hi, 17)

    def nll_at(z: float) -> float:
        try:
            candidate = replace(partial, q=q_center * 10.0**z)
            value = forward_pass(ts, candidate, order).nll
        except (ConditioningError, ValueError, OverflowError):
            return math.inf
        return value if math.isfinite(value) else math.inf

    scan = [nll_at(z) for z in offsets]
    best = int(np.argmin(scan))
    if not math.isfinite(scan[best]):
        raise FittingError("likelihood is not finite anywhere on the intensity scan")
    if best in (0, len(offsets) - 1):
        return QSearch(q=q_center * 10.0 ** offsets[best], hit_boundary=True)
    z_opt = _golden(nll_at, offsets[best - 1], offsets[best + 1], _Q_REFINE_TOL)
    return QSearch(q=q_center * 10.0**z_opt, hit_boundary=False)


def fit(ts: TimeSeries, order: int = 3, config: EmConfig | None = None) -> FitReport:
    """Estimate all parameters by EM and return the final smoothed states.

    Convergence is declared when the smoothed signal (first state
    component over all abscissas) changes by less than ``rel_tol`` in
    relative L2 norm between iterations.  Non-convergence within
    ``max_iters`` is reported via the flag, not raised.
    """
    cfg = config if config is not None else EmConfig()
    order = check_order(order)
    if len(ts) < 2:
        raise FittingError("fitting needs at least two abscissas")
    if ts.n_total < 2:
        raise FittingError("fitting needs at least two measurements")

    m0, r0, p0_factor, _ = _line_init(ts, order, cfg)
    seed = ModelParams(q=1.0, r=r0, m0=m0, p0_factor=p0_factor)
    search = minimize_q(ts, seed, order, cfg.q_search_decades)
    params = replace(seed, q=search.q)

    fr = forward_pass(ts, params, order)
    sr = backward_pass(fr)
    trace = [fr.nll]
    signal = np.array(sr.means[:, 0])
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        params = _maximize(_stats_from(fr, sr), cfg)
        fr = forward_pass(ts, params, order)
        sr = backward_pass(fr)
        trace.append(fr.nll)
        iterations += 1
        new_signal = sr.means[:, 0]
        gap = float(np.linalg.norm(new_signal - signal))
        denom = float(np.linalg.norm(new_signal))
        signal = np.array(new_signal)
        if (gap <= cfg.rel_tol * denom) if denom > 0.0 else (gap == 0.0):
            converged = True
            break

    return FitReport(
        params=params,
        smoothed=sr,
        forward=fr,
        nll_trace=trace,
        iterations=iterations,
        converged=converged,
        q_scan_boundary=search.hit_boundary,
    )
