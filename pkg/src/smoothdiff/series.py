"""Measurement sequences on a strictly increasing time grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Scalar measurements grouped by abscissa.

    Each abscissa carries any number of simultaneous measurements,
    including none; measurement-free abscissas are how prediction-only
    query points are expressed.
    """

    abscissas: np.ndarray
    measurements: tuple[np.ndarray, ...]

    def __post_init__(self):
        t = _frozen(self.abscissas)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("abscissas must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(t)):
            raise ValueError("abscissas must be finite")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("abscissas must be strictly increasing")
        if len(self.measurements) != t.size:
            raise ValueError("need exactly one measurement group per abscissa")
        groups = []
        for k, group in enumerate(self.measurements):
            arr = _frozen(group)
            if arr.ndim != 1:
                raise ValueError(f"measurement group {k} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"measurement group {k} contains non-finite values")
            groups.append(arr)
        object.__setattr__(self, "abscissas", t)
        object.__setattr__(self, "measurements", tuple(groups))

    @classmethod
    def from_columns(cls, times, values) -> "TimeSeries":
        """Group flat (time, value) columns into a series.

        Equal times become simultaneous measurements at one abscissa;
        times must be nondecreasing.
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be matching 1-d columns")
        if times.size == 0:
            raise ValueError("empty input")
        if np.any(np.diff(times) < 0):
            raise ValueError("abscissas must be nondecreasing")
        cut = np.flatnonzero(np.diff(times)) + 1
        starts = np.concatenate(([0], cut))
        ends = np.concatenate((cut, [times.size]))
        return cls(times[starts], tuple(values[a:b] for a, b in zip(starts, ends)))

    def insert_empty(self, t: float) -> "TimeSeries":
        """Copy of the series with an extra measurement-free abscissa at ``t``."""
        t = float(t)
        pos = int(np.searchsorted(self.abscissas, t))
        if pos < self.abscissas.size and self.abscissas[pos] == t:
            raise ValueError(f"abscissa {t} already present")
        new_t = np.insert(self.abscissas, pos, t)
        new_groups = self.measurements[:pos] + (np.empty(0),) + self.measurements[pos:]
        return TimeSeries(new_t, new_groups)

    def __len__(self) -> int:
        return self.abscissas.size

    @property
    def n_total(self) -> int:
        """Total number of measurements across all abscissas."""
        return int(sum(g.size for g in self.measurements))

    def all_values(self) -> np.ndarray:
        """All measurement values concatenated in abscissa order."""
        return np.concatenate(self.measurements)
