"""Square-root Kalman forward pass with exact negative log-likelihood.

Covariances travel as lower-triangular Cholesky factors and are updated
through QR factorizations of small stacked blocks; the covariance itself
is never formed, which keeps the pass well behaved for stiff step sizes
and tiny noise levels.  QR factors are made unique by flipping signs so
the triangular diagonal is nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import lower_from_stack, r_factor
from .errors import ConditioningError
from .model import ProcessNoise, Transition, check_order, process_noise_base, transition_matrix
from .series import TimeSeries

_LOG_TWO_PI = math.log(2.0 * math.pi)

# Below this the innovation variance is treated as collapsed rather than
# divided by; failing loudly beats emitting infinities.
INNOVATION_FLOOR = 1e-300


@dataclass(frozen=True)
class SqrtGaussian:
    """Gaussian state as mean plus lower-triangular covariance factor."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def cov(self) -> np.ndarray:
        """Dense covariance; exactly symmetric by construction."""
        return self.cov_factor @ self.cov_factor.T


@dataclass(frozen=True)
class ModelParams:
    """The four estimated quantities.

    ``q`` is the driving-noise intensity of the highest derivative, ``r``
    the measurement variance, and ``m0``/``p0_factor`` the mean and
    lower-triangular covariance factor of the state before any data.
    """

    q: float
    r: float
    m0: np.ndarray
    p0_factor: np.ndarray

    def __post_init__(self):
        q = float(self.q)
        r = float(self.r)
        if not (math.isfinite(q) and q > 0.0):
            raise ValueError(f"noise intensity q must be positive and finite, got {q}")
        if not (math.isfinite(r) and r > 0.0):
            raise ValueError(f"measurement variance r must be positive and finite, got {r}")
        m0 = np.array(self.m0, dtype=float)
        p0 = np.array(self.p0_factor, dtype=float)
        if m0.ndim != 1 or m0.size == 0 or not np.all(np.isfinite(m0)):
            raise ValueError("m0 must be a finite 1-d vector")
        if p0.shape != (m0.size, m0.size) or not np.all(np.isfinite(p0)):
            raise ValueError("p0_factor must be a finite square matrix matching m0")
        if np.count_nonzero(np.triu(p0, 1)):
            raise ValueError("p0_factor must be lower triangular")
        if np.any(np.diagonal(p0) < 0.0):
            raise ValueError("p0_factor must have a nonnegative diagonal")
        m0.flags.writeable = False
        p0.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "p0_factor", p0)

    @classmethod
    def from_cov(cls, q: float, r: float, m0, p0) -> "ModelParams":
        """Build from a dense symmetric positive-definite initial covariance."""
        p0 = np.asarray(p0, dtype=float)
        factor = np.linalg.cholesky(0.5 * (p0 + p0.T))
        return cls(q=q, r=r, m0=m0, p0_factor=factor)

    @property
    def order(self) -> int:
        return self.m0.size


@dataclass
class ForwardRecord:
    """Everything the forward pass produces, in abscissa order.

    ``pred_*`` arrays hold the one-step-ahead state from abscissa k to
    k + 1 and therefore have one entry fewer than the filtered arrays.
    Innovations are (residual, variance) pairs per measurement.
    """

    series: TimeSeries
    order: int
    params: ModelParams
    filtered_means: np.ndarray
    filtered_factors: np.ndarray
    pred_means: np.ndarray
    pred_factors: np.ndarray
    transitions: list[Transition]
    noises: list[ProcessNoise]
    innovations: list[list[tuple[float, float]]]
    nll: float

    def filtered_state(self, k: int) -> SqrtGaussian:
        return SqrtGaussian(self.filtered_means[k], self.filtered_factors[k])

    def predicted_state(self, k: int) -> SqrtGaussian:
        return SqrtGaussian(self.pred_means[k], self.pred_factors[k])


def measurement_update(
    state: SqrtGaussian, y: float, r: float
) -> tuple[SqrtGaussian, float, float]:
    """Condition the state on one scalar measurement of its first component.

    Returns the updated state, the innovation, and the innovation variance
    (the two likelihood ingredients).
    """
    y = float(y)
    if not math.isfinite(y):
        raise ValueError(f"measurement must be finite, got {y}")
    r = float(r)
    if not (math.isfinite(r) and r > 0.0):
        raise ValueError(f"measurement variance must be positive, got {r}")
    mean = state.mean
    factor = state.cov_factor
    d = mean.shape[0]

    pre = np.zeros((d + 1, d + 1))
    pre[0, 0] = math.sqrt(r)
    pre[1:, 0] = factor[0, :]
    pre[1:, 1:] = factor.T
    rfac = r_factor(pre)

    s = rfac[0, 0] ** 2
    if not (math.isfinite(s) and s > INNOVATION_FLOOR):
        raise ConditioningError(f"innovation variance collapsed to {s}")
    gain = rfac[0, 1:] / rfac[0, 0]
    v = y - mean[0]
    return SqrtGaussian(mean + gain * v, rfac[1:, 1:].T), v, s


def dynamic_update(
    state: SqrtGaussian, transition: Transition, q: float, noise: ProcessNoise
) -> SqrtGaussian:
    """Propagate the state through one step of the integrator dynamics."""
    q = float(q)
    if not (math.isfinite(q) and q > 0.0):
        raise ValueError(f"noise intensity must be positive, got {q}")
    d = state.mean.shape[0]
    if transition.a.shape != (d, d) or noise.qbar_chol.shape != (d, d):
        raise ValueError("dimension mismatch between state and model matrices")
    stack = np.empty((2 * d, d))
    stack[:d] = (transition.a @ state.cov_factor).T
    stack[d:] = math.sqrt(q) * noise.qbar_chol.T
    return SqrtGaussian(transition.a @ state.mean, lower_from_stack(stack))


def forward_pass(ts: TimeSeries, params: ModelParams, order: int) -> ForwardRecord:
    """Run the filter over the whole series.

    Measurements at one abscissa are absorbed one at a time (a no-op for
    measurement-free abscissas); the exact negative log-likelihood is
    accumulated from the scalar innovations along the way.
    """
    order = check_order(order)
    if params.order != order:
        raise ValueError(f"params are for order {params.order}, requested {order}")
    if ts.n_total < 1:
        raise ValueError("filtering needs at least one measurement")

    t = ts.abscissas
    t_count = t.size
    filtered_means = np.empty((t_count, order))
    filtered_factors = np.empty((t_count, order, order))
    pred_means = np.empty((t_count - 1, order))
    pred_factors = np.empty((t_count - 1, order, order))
    transitions: list[Transition] = []
    noises: list[ProcessNoise] = []
    innovations: list[list[tuple[float, float]]] = []

    # uniform grids repeat one step size; reuse the discretized pair
    discretized: dict[float, tuple[Transition, ProcessNoise]] = {}

    state = SqrtGaussian(params.m0, params.p0_factor)
    nll = 0.0
    for k in range(t_count):
        step_inn: list[tuple[float, float]] = []
        for j, y in enumerate(ts.measurements[k]):
            try:
                state, v, s = measurement_update(state, y, params.r)
            except ConditioningError as exc:
                raise ConditioningError(
                    f"abscissa {k}, measurement {j}: {exc}"
                ) from exc
            nll += 0.5 * (math.log(2.0 * math.pi * s) + v * v / s)
            step_inn.append((v, s))
        innovations.append(step_inn)
        filtered_means[k] = state.mean
        filtered_factors[k] = state.cov_factor
        if k < t_count - 1:
            dt = float(t[k + 1] - t[k])
            pair = discretized.get(dt)
            if pair is None:
                pair = (transition_matrix(order, dt), process_noise_base(order, dt))
                discretized[dt] = pair
            trans, noise = pair
            state = dynamic_update(state, trans, params.q, noise)
            pred_means[k] = state.mean
            pred_factors[k] = state.cov_factor
            transitions.append(trans)
            noises.append(noise)

    return ForwardRecord(
        series=ts,
        order=order,
        params=params,
        filtered_means=filtered_means,
        filtered_factors=filtered_factors,
        pred_means=pred_means,
        pred_factors=pred_factors,
        transitions=transitions,
        noises=noises,
        innovations=innovations,
        nll=nll,
    )
