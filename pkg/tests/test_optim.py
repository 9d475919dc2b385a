import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psg_stager.errors import NumericError
from psg_stager.optim import OptimConfig, OptimState, adam_step, lr_at, variance_scaling_init


class TestSchedule:
    def test_decade_values_exact(self):
        cfg = OptimConfig()
        assert lr_at(0, cfg) == 1e-3
        assert lr_at(50_000, cfg) == 1e-4
        assert lr_at(100_000, cfg) == 1e-5
        assert lr_at(125_000, cfg) == 1e-5  # floor(125000/50000) = 2

    def test_constant_within_interval(self):
        cfg = OptimConfig()
        assert lr_at(1, cfg) == lr_at(49_999, cfg) == 1e-3
        assert lr_at(50_000, cfg) == lr_at(99_999, cfg)

    @settings(max_examples=50, deadline=None)
    @given(step=st.integers(0, 10_000_000))
    def test_non_increasing_and_right_continuous(self, step):
        cfg = OptimConfig()
        assert lr_at(step + 1, cfg) <= lr_at(step, cfg)
        if step % cfg.decay_every == 0 and step > 0:
            # drops exactly at the boundary, stays flat immediately after
            assert lr_at(step, cfg) < lr_at(step - 1, cfg)
            assert lr_at(step, cfg) == lr_at(step + 1, cfg)


class TestAdam:
    @staticmethod
    def _single(w0, dtype=np.float64, **cfg_kwargs):
        params = {"p.weight": np.array([w0], dtype=dtype)}
        cfg = OptimConfig(**cfg_kwargs)
        return params, OptimState(params), cfg

    def test_zero_gradient_no_decay_is_noop(self):
        params, state, cfg = self._single(1.5, weight_decay=0.0)
        adam_step(params, {"p.weight": np.zeros(1)}, state, cfg)
        np.testing.assert_allclose(params["p.weight"], [1.5])

    def test_first_step_magnitude(self):
        # closed form: with zero moments, update = lr*g / (|g| + eps) ~ lr
        for g0 in (0.3, -4.0):
            params, state, cfg = self._single(0.0, weight_decay=0.0)
            adam_step(params, {"p.weight": np.array([g0])}, state, cfg)
            expected = -cfg.alpha0 * g0 / (abs(g0) + cfg.adam_epsilon)
            np.testing.assert_allclose(params["p.weight"], [expected], rtol=1e-9)

    def test_decay_only_shrinks_toward_zero(self):
        params, state, cfg = self._single(2.0, weight_decay=1e-2)
        for _ in range(50):
            adam_step(params, {"p.weight": np.zeros(1)}, state, cfg)
        assert 0.0 < params["p.weight"][0] < 2.0

    def test_biases_exempt_from_decay(self):
        params = {"p.bias": np.array([2.0])}
        state = OptimState(params)
        adam_step(params, {"p.bias": np.zeros(1)}, state, OptimConfig())
        np.testing.assert_allclose(params["p.bias"], [2.0])

    def test_odd_symmetry_without_decay(self):
        rng = np.random.default_rng(0)
        grads = [rng.standard_normal(3) for _ in range(20)]

        def run(sign):
            params = {"p.weight": np.full(3, sign * 0.7)}
            state = OptimState(params)
            cfg = OptimConfig(weight_decay=0.0)
            for g in grads:
                adam_step(params, {"p.weight": sign * g}, state, cfg)
            return params["p.weight"]

        np.testing.assert_allclose(run(1.0), -run(-1.0), rtol=1e-12)

    def test_quadratic_convergence(self):
        # f(w) = w^2/2, gradient w; |w| < 1e-3 within 5000 steps
        params, state, cfg = self._single(1.0, weight_decay=0.0)
        for i in range(5000):
            adam_step(params, {"p.weight": params["p.weight"].copy()}, state, cfg)
            if abs(params["p.weight"][0]) < 1e-3:
                break
        assert abs(params["p.weight"][0]) < 1e-3

    def test_nan_gradient_aborts_with_name(self):
        params, state, cfg = self._single(1.0)
        before = params["p.weight"].copy()
        with pytest.raises(NumericError, match="p.weight"):
            adam_step(params, {"p.weight": np.array([np.nan])}, state, cfg)
        np.testing.assert_array_equal(params["p.weight"], before)

    def test_step_counter_advances(self):
        params, state, cfg = self._single(1.0)
        assert state.step == 0
        adam_step(params, {"p.weight": np.ones(1)}, state, cfg)
        assert state.step == 1


class TestVarianceScalingInit:
    def test_same_seed_identical(self):
        a = variance_scaling_init((4, 3, 5), fan_in=15, seed=7)
        b = variance_scaling_init((4, 3, 5), fan_in=15, seed=7)
        assert np.array_equal(a, b)

    def test_sample_mean_near_zero(self):
        fan_in = 30
        draws = variance_scaling_init((100_000,), fan_in=fan_in, seed=11)
        se = math.sqrt(2.0 / fan_in) / math.sqrt(draws.size)
        assert abs(draws.mean()) < 3 * se

    def test_sample_variance_matches_target(self):
        fan_in = 48
        draws = variance_scaling_init((100_000,), fan_in=fan_in, seed=13)
        target = 2.0 / fan_in
        assert abs(draws.var() - target) < 0.1 * target

    def test_truncation_bound(self):
        fan_in = 10
        draws = variance_scaling_init((50_000,), fan_in=fan_in, seed=17)
        # draws are truncated at 2 pre-correction sigmas
        phi2 = math.exp(-2.0) / math.sqrt(2.0 * math.pi)
        mass = math.erf(2.0 / math.sqrt(2.0))
        sigma = math.sqrt((2.0 / fan_in) / (1.0 - 4.0 * phi2 / mass))
        assert np.abs(draws).max() <= 2.0 * sigma + 1e-12
