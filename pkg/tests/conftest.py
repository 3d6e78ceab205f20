"""Shared generators and metrics for the test suite."""

import numpy as np

from smoothdiff import ModelParams, TimeSeries, process_noise_base, transition_matrix


def rel_gap(actual, reference) -> float:
    """Norm of the difference relative to the reference norm, floored at 1."""
    actual = np.asarray(actual, dtype=float)
    reference = np.asarray(reference, dtype=float)
    return float(np.linalg.norm(actual - reference) / max(1.0, np.linalg.norm(reference)))


def rel_rms(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((estimate - truth) ** 2) / np.mean(truth**2)))


def random_spd_factor(rng, dim, spread=0.5) -> np.ndarray:
    """Cholesky factor of a random SPD matrix with moderate conditioning."""
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    vals = 10.0 ** rng.uniform(-spread, spread, dim)
    sym = (basis * vals) @ basis.T
    return np.linalg.cholesky(0.5 * (sym + sym.T))


def sample_groups(rng, t, counts, params, order):
    """Simulate measurement groups from the generative model itself."""
    x = params.m0 + params.p0_factor @ rng.normal(size=order)
    sigma = np.sqrt(params.r)
    groups = []
    for k in range(t.size):
        groups.append(x[0] + sigma * rng.normal(size=int(counts[k])))
        if k < t.size - 1:
            dt = float(t[k + 1] - t[k])
            noise = process_noise_base(order, dt).qbar_chol @ rng.normal(size=order)
            x = transition_matrix(order, dt).a @ x + np.sqrt(params.q) * noise
    return tuple(groups)


def make_instance(
    rng,
    t_count=None,
    order=None,
    dt_decades=(-2.0, 2.0),
    n_choices=(0, 1, 2, 3),
    min_n=1,
    max_t=20,
):
    """Random model + data drawn from it.

    The state is expressed in span-relative units (component j scaled by
    span**-j) so that dense reference computations stay well conditioned
    while step sizes cover the full requested range.
    """
    if order is None:
        order = int(rng.integers(1, 5))
    if t_count is None:
        t_count = int(rng.integers(1, max_t + 1))
    dts = 10.0 ** rng.uniform(dt_decades[0], dt_decades[1], t_count - 1)
    t = np.concatenate(([0.0], np.cumsum(dts))) + rng.normal()
    counts = rng.choice(n_choices, size=t_count)
    while counts.sum() < min_n:
        counts[rng.integers(t_count)] += 1
    span = max(float(t[-1] - t[0]), 1.0)
    deriv_scale = span ** (-np.arange(order, dtype=float))
    params = ModelParams(
        q=10.0 ** rng.uniform(-1, 1) / span ** (2 * order - 1),
        r=10.0 ** rng.uniform(-2, 1),
        m0=rng.normal(size=order) * deriv_scale,
        p0_factor=deriv_scale[:, None] * random_spd_factor(rng, order),
    )
    ts = TimeSeries(t, sample_groups(rng, t, counts, params, order))
    return ts, params, order


def make_fit_instance(rng, t_count=None, order=None):
    """Random instance with strong curvature-to-noise contrast.

    Estimation tests need the noise intensity to be identifiable: here the
    process wander over the window is O(1) and the measurement noise is
    well below it, so the likelihood has an interior optimum in q.
    """
    if order is None:
        order = int(rng.integers(1, 4))
    if t_count is None:
        t_count = int(rng.integers(10, 26))
    dts = 10.0 ** rng.uniform(-0.5, 0.5, t_count - 1)
    t = np.concatenate(([0.0], np.cumsum(dts)))
    counts = rng.choice((1, 1, 1, 2), size=t_count)
    span = float(t[-1] - t[0])
    deriv_scale = span ** (-np.arange(order, dtype=float))
    params = ModelParams(
        q=10.0 ** rng.uniform(0.0, 1.0) / span ** (2 * order - 1),
        r=10.0 ** rng.uniform(-3.0, -1.5),
        m0=rng.normal(size=order) * deriv_scale,
        p0_factor=deriv_scale[:, None] * random_spd_factor(rng, order),
    )
    ts = TimeSeries(t, sample_groups(rng, t, counts, params, order))
    return ts, params, order


BENCH_FREQS = (0.6, 1.4, 2.3)
BENCH_AMPS = (1.0, 0.6, 0.4)


def benchmark_signal(rng, n=94, noise_range=(0.01, 0.03)):
    """Band-limited sum of three sinusoids on 94 uniform samples, with
    additive Gaussian noise at 1-3% of the signal RMS."""
    t = np.linspace(0.0, 1.0, n)
    w = 2.0 * np.pi * np.asarray(BENCH_FREQS)
    amps = np.asarray(BENCH_AMPS)
    phases = rng.uniform(0.0, 2.0 * np.pi, len(amps))
    arg = np.outer(t, w) + phases
    pos = (amps * np.sin(arg)).sum(axis=1)
    vel = (amps * w * np.cos(arg)).sum(axis=1)
    acc = -(amps * w**2 * np.sin(arg)).sum(axis=1)
    level = rng.uniform(*noise_range)
    sigma = level * np.sqrt(np.mean(pos**2))
    y = pos + sigma * rng.normal(size=n)
    return t, y, pos, vel, acc


def central_differences(y, h):
    """First and second central differences on a uniform grid (interior only)."""
    vel = (y[2:] - y[:-2]) / (2.0 * h)
    acc = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / h**2
    return vel, acc
