"""Discrete-time matrices of a repeatedly integrated Wiener process.

The state vector stacks a signal and its first ``order - 1`` derivatives;
unit-intensity white noise drives the highest derivative.  Because the
continuous-time generator is nilpotent, both the transition block over a
step ``dt`` and the process-noise covariance have exact closed forms:

    a[i, j]    = dt**(j-i) / (j-i)!                          for j >= i
    qbar[i, j] = dt**e / (e * (n-1-i)! * (n-1-j)!),  e = 2n-1-i-j

with ``n`` the order and all indices zero-based.  ``qbar`` factors as
``D M D`` with ``D`` a diagonal of half-integer powers of ``dt`` and ``M``
a constant Hilbert-like fraction matrix, so its Cholesky factor is obtained
by scaling a once-per-order factorization of ``M`` (exact for diagonal
scalings, and far better conditioned than refactorizing ``qbar`` itself).

Results for repeated ``(order, dt)`` pairs are cached, which makes uniform
grids essentially free.  All returned arrays are read-only.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConditioningError

MAX_ORDER = 8


def check_order(order: int) -> int:
    """Validate a state dimension and return it as a plain int."""
    order = operator.index(order)
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"model order must be between 1 and {MAX_ORDER}, got {order}")
    return order


@dataclass(frozen=True)
class Transition:
    """One-step transition: upper-triangular Taylor block with unit diagonal."""

    a: np.ndarray
    dt: float


@dataclass(frozen=True)
class ProcessNoise:
    """Unit-intensity process noise over one step, with its Cholesky factor."""

    qbar: np.ndarray
    qbar_chol: np.ndarray
    dt: float


def _checked_step(dt) -> float:
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValueError(f"time step must be a positive finite number, got {dt}")
    return dt


@lru_cache(maxsize=None)
def _fraction_chol(order: int) -> np.ndarray:
    """Lower Cholesky factor of the step-free fraction matrix M.

    M is the Gram matrix of the monomials entering the noise response.
    The factorization is done on the bare reciprocal (Hilbert-like) part
    and the inverse-factorial scaling is applied afterwards.
    """
    idx = np.arange(order)
    recip = 1.0 / (2 * order - 1 - idx[:, None] - idx[None, :])
    try:
        chol = np.linalg.cholesky(recip)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"process-noise fraction matrix is numerically singular at order {order}"
        ) from exc
    scale = np.array([1.0 / math.factorial(order - 1 - i) for i in range(order)])
    factor = scale[:, None] * chol
    factor.flags.writeable = False
    return factor


@lru_cache(maxsize=8192)
def _discretize(order: int, dt: float):
    idx = np.arange(order)

    a = np.zeros((order, order))
    for off in range(order):
        rows = idx[: order - off]
        a[rows, rows + off] = dt**off / math.factorial(off)

    expo = 2 * order - 1 - idx[:, None] - idx[None, :]
    fact = np.array([math.factorial(order - 1 - i) for i in range(order)], dtype=float)
    qbar = dt ** expo.astype(float) / (expo * fact[:, None] * fact[None, :])

    half_powers = dt ** (idx[::-1] + 0.5)
    qbar_chol = half_powers[:, None] * _fraction_chol(order)

    for arr in (a, qbar, qbar_chol):
        arr.flags.writeable = False
    return a, qbar, qbar_chol


def transition_matrix(order: int, dt: float) -> Transition:
    """Closed-form transition block for a step of length ``dt``."""
    order = check_order(order)
    dt = _checked_step(dt)
    a, _, _ = _discretize(order, dt)
    return Transition(a=a, dt=dt)


def process_noise_base(order: int, dt: float) -> ProcessNoise:
    """Unit-intensity process-noise covariance for a step of length ``dt``."""
    order = check_order(order)
    dt = _checked_step(dt)
    _, qbar, qbar_chol = _discretize(order, dt)
    return ProcessNoise(qbar=qbar, qbar_chol=qbar_chol, dt=dt)
