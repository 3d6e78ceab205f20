"""Self-consistency of the dense verification reference."""

import math

import numpy as np
import pytest
from conftest import make_instance, rel_gap

from smoothdiff import (
    ConditioningError,
    ModelParams,
    TimeSeries,
    dynamic_update,
    forward_pass,
    SqrtGaussian,
)
from smoothdiff.reference import (
    JointGaussian,
    build_joint_prior,
    condition_on_measurements,
    nll_direct,
)


class TestJointPrior:
    def test_single_abscissa(self):
        params = ModelParams(q=1.0, r=1.0, m0=np.array([0.3, -0.1]), p0_factor=np.eye(2))
        ts = TimeSeries(np.array([4.0]), (np.array([0.0]),))
        jg = build_joint_prior(ts, params, 2)
        np.testing.assert_array_equal(jg.mean, params.m0)
        np.testing.assert_array_equal(jg.cov, np.eye(2))

    def test_two_point_scalar(self):
        params = ModelParams(q=1.0, r=1.0, m0=np.zeros(1), p0_factor=np.eye(1))
        ts = TimeSeries(np.array([0.0, 1.0]), (np.array([0.0]), np.array([0.0])))
        jg = build_joint_prior(ts, params, 1)
        np.testing.assert_allclose(jg.cov, [[1.0, 1.0], [1.0, 2.0]], rtol=1e-14)

    def test_marginals_match_dynamic_updates(self):
        rng = np.random.default_rng(60)
        ts, params, order = make_instance(rng, t_count=3, order=2, min_n=2)
        jg = build_joint_prior(ts, params, order)
        state = SqrtGaussian(params.m0, params.p0_factor)
        from smoothdiff import process_noise_base, transition_matrix

        for k in range(2):
            dt = float(ts.abscissas[k + 1] - ts.abscissas[k])
            state = dynamic_update(
                state, transition_matrix(order, dt), params.q, process_noise_base(order, dt)
            )
            sl = slice((k + 1) * order, (k + 2) * order)
            assert rel_gap(state.mean, jg.mean[sl]) <= 1e-12
            assert rel_gap(state.cov(), jg.cov[sl, sl]) <= 1e-10

    def test_size_guard(self):
        t = np.arange(101.0)
        ts = TimeSeries(t, tuple(np.array([0.0]) for _ in t))
        params = ModelParams(q=1.0, r=1.0, m0=np.zeros(4), p0_factor=np.eye(4))
        with pytest.raises(ValueError):
            build_joint_prior(ts, params, 4)

    def test_covariance_symmetric(self):
        rng = np.random.default_rng(61)
        ts, params, order = make_instance(rng, t_count=6)
        jg = build_joint_prior(ts, params, order)
        np.testing.assert_array_equal(jg.cov, jg.cov.T)


class TestConditioning:
    def test_scalar_posterior(self):
        params = ModelParams(q=1.0, r=1.0, m0=np.zeros(1), p0_factor=np.eye(1))
        ts = TimeSeries(np.array([0.0]), (np.array([2.0]),))
        jg = condition_on_measurements(build_joint_prior(ts, params, 1), ts, 1.0)
        np.testing.assert_allclose(jg.mean, [1.0], rtol=1e-14)
        np.testing.assert_allclose(jg.cov, [[0.5]], rtol=1e-14)

    def test_sequential_equals_batch(self):
        rng = np.random.default_rng(62)
        ts, params, order = make_instance(rng, t_count=5, min_n=4)
        batch = condition_on_measurements(
            build_joint_prior(ts, params, order), ts, params.r
        )
        current = build_joint_prior(ts, params, order)
        for k, group in enumerate(ts.measurements):
            for y in group:
                single = TimeSeries(
                    ts.abscissas,
                    tuple(
                        np.array([y]) if i == k else np.empty(0)
                        for i in range(len(ts))
                    ),
                )
                current = condition_on_measurements(current, single, params.r)
        assert rel_gap(current.mean, batch.mean) <= 1e-9
        assert rel_gap(current.cov, batch.cov) <= 1e-9

    def test_duplicates_equal_pooled_measurement(self):
        rng = np.random.default_rng(63)
        params = ModelParams(
            q=0.7, r=0.9, m0=rng.normal(size=2), p0_factor=np.linalg.cholesky(np.eye(2) * 1.3)
        )
        ys = rng.normal(size=3)
        ts_many = TimeSeries(np.array([0.0]), (ys,))
        many = condition_on_measurements(build_joint_prior(ts_many, params, 2), ts_many, 0.9)
        ts_one = TimeSeries(np.array([0.0]), (np.array([ys.mean()]),))
        one = condition_on_measurements(build_joint_prior(ts_one, params, 2), ts_one, 0.9 / 3.0)
        assert rel_gap(one.mean, many.mean) <= 1e-12
        assert rel_gap(one.cov, many.cov) <= 1e-12


class TestNllDirect:
    def test_single_point(self):
        params = ModelParams(q=1.0, r=1.0, m0=np.zeros(1), p0_factor=np.eye(1))
        ts = TimeSeries(np.array([0.0]), (np.array([0.0]),))
        assert np.isclose(nll_direct(ts, params, 1), 0.5 * math.log(4.0 * math.pi), rtol=1e-14)

    def test_matches_forward_pass(self):
        rng = np.random.default_rng(64)
        for _ in range(10):
            ts, params, order = make_instance(rng, t_count=10, order=3, min_n=2)
            assert abs(nll_direct(ts, params, order) - forward_pass(ts, params, order).nll) <= 1e-9

    def test_translation_invariance(self):
        rng = np.random.default_rng(65)
        ts, params, order = make_instance(rng, t_count=6, min_n=3)
        shift = 11.5
        shifted_groups = tuple(g + shift for g in ts.measurements)
        ts2 = TimeSeries(ts.abscissas, shifted_groups)
        m0 = np.array(params.m0)
        m0[0] += shift
        params2 = ModelParams(q=params.q, r=params.r, m0=m0, p0_factor=params.p0_factor)
        assert abs(nll_direct(ts, params, order) - nll_direct(ts2, params2, order)) <= 1e-10
