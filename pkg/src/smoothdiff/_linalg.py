"""Small dense kernels shared by the square-root passes.

These run thousands of times per fit on matrices of side at most a few
times the model order, so they call the LAPACK primitives directly and
keep per-call Python overhead minimal.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import get_lapack_funcs

_GEQRF, _TRTRS = get_lapack_funcs(
    ("geqrf", "trtrs"), (np.empty((2, 2), dtype=np.float64),)
)


@lru_cache(maxsize=None)
def _strict_lower_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool), -1)


def nonneg_rows(tri: np.ndarray) -> np.ndarray:
    """Flip row signs of a triangular factor so its diagonal is nonnegative."""
    signs = np.where(np.diagonal(tri) < 0.0, -1.0, 1.0)
    return tri * signs[:, None]


def r_factor(stack: np.ndarray) -> np.ndarray:
    """Upper-triangular QR factor of ``stack`` with nonnegative diagonal.

    Row signs are flipped to fix the sign ambiguity of the factorization;
    R.T @ R equals stack.T @ stack either way.
    """
    n = stack.shape[1]
    qr, _, _, info = _GEQRF(stack)
    if info != 0:
        raise np.linalg.LinAlgError(f"QR factorization failed (info={info})")
    r = np.array(qr[:n], order="C")
    r[_strict_lower_mask(n)] = 0.0
    signs = np.where(np.diagonal(r) < 0.0, -1.0, 1.0)
    r *= signs[:, None]
    return r


def lower_from_stack(stack: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == stack.T @ stack, diagonal >= 0."""
    return r_factor(stack).T


def solve_lower(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L x = rhs for lower-triangular L."""
    x, info = _TRTRS(factor, rhs, lower=1, trans=0)
    if info != 0:
        raise np.linalg.LinAlgError(f"triangular solve failed (info={info})")
    return x


def solve_lower_t(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L.T x = rhs for lower-triangular L."""
    x, info = _TRTRS(factor, rhs, lower=1, trans=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"triangular solve failed (info={info})")
    return x


def spd_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L @ L.T) x = rhs given the lower factor L."""
    return solve_lower_t(factor, solve_lower(factor, rhs))


def trace_spd_solve(factor: np.ndarray, sym: np.ndarray) -> float:
    """Trace of (L @ L.T)^-1 @ S for symmetric S, via two triangular solves."""
    half = solve_lower(factor, sym)
    full = solve_lower(factor, half.T)
    return float(np.trace(full))
