import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdcalib.sampler import (
    ReverseStepMode,
    forward_sample,
    posterior_mean,
    posterior_sigma,
    posterior_variance,
    reverse_step,
)

vec6 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=6, max_size=6).map(np.array)


def mp_ab(t, T=1000, s="0.008"):
    s = mpmath.mpf(s)
    f = lambda u: mpmath.cos((mpmath.mpf(u) / T + s) / (1 + s) * mpmath.pi / 2) ** 2
    return f(t) / f(0)


class TestForward:
    def test_t0_is_identity(self, schedule, rng):
        x0 = rng.normal(size=6)
        np.testing.assert_array_equal(forward_sample(x0, rng.normal(size=6), 0, schedule), x0)

    def test_dirac_noise_shrinks(self, schedule):
        x0 = np.arange(6.0)
        xt = forward_sample(x0, np.zeros(6), 500, schedule)
        np.testing.assert_allclose(xt, math.sqrt(schedule.alpha_bar[500]) * x0, rtol=1e-15)

    def test_t_out_of_range(self, schedule):
        with pytest.raises(ValueError):
            forward_sample(np.zeros(6), np.zeros(6), 1001, schedule)


class TestPosterior:
    def test_t1_returns_clean_estimate(self, schedule, rng):
        for _ in range(100):
            xt, x0 = rng.normal(size=6) * 10, rng.normal(size=6)
            np.testing.assert_allclose(posterior_mean(xt, x0, 1, schedule), x0, rtol=0, atol=1e-15)

    def test_t0_rejected(self, schedule):
        with pytest.raises(ValueError):
            posterior_mean(np.zeros(6), np.zeros(6), 0, schedule)

    @pytest.mark.parametrize("t", [2, 100, 500, 999])
    def test_coefficients_match_extended_precision(self, schedule, t):
        with mpmath.workdps(40):
            ab, ab_prev = mp_ab(t), mp_ab(t - 1)
            a = ab / ab_prev
            c_t = mpmath.sqrt(a) * (1 - ab_prev) / (1 - ab)
            c_0 = mpmath.sqrt(ab_prev) * (1 - a) / (1 - ab)
            var = (1 - a) * (1 - ab_prev) / (1 - ab)
        e = np.eye(6)[0]
        assert posterior_mean(e, np.zeros(6), t, schedule)[0] == pytest.approx(float(c_t), rel=1e-10)
        assert posterior_mean(np.zeros(6), e, t, schedule)[0] == pytest.approx(float(c_0), rel=1e-10)
        assert posterior_sigma(t, schedule) == pytest.approx(float(var), rel=1e-9)

    def test_sigma_at_500(self, schedule):
        with mpmath.workdps(40):
            ab, ab_prev = mp_ab(500), mp_ab(499)
            var = (1 - ab / ab_prev) * (1 - ab_prev) / (1 - ab)
        assert posterior_sigma(500, schedule) == pytest.approx(float(var), rel=1e-9)
        assert 0 < posterior_sigma(500, schedule) < schedule.beta[500]

    def test_variance_zero_at_t1(self, schedule):
        assert posterior_sigma(1, schedule) == 0.0

    @given(vec6, st.integers(2, 1000))
    @settings(max_examples=100, deadline=None)
    def test_fixed_point_under_dirac_forward(self, x0, t):
        """A state exactly on the deterministic forward path steps to the next point on it."""
        from lsdcalib.schedule import build_cosine_schedule

        sched = build_cosine_schedule()
        xt = math.sqrt(sched.alpha_bar[t]) * x0
        nxt = posterior_mean(xt, x0, t, sched)
        expected = math.sqrt(sched.alpha_bar[t - 1]) * x0
        np.testing.assert_allclose(nxt, expected, atol=1e-9 * (1 + np.abs(x0).max()))

    def test_skip_step_variance_formula(self, schedule):
        ab_f, ab_t = schedule.alpha_bar[800], schedule.alpha_bar[300]
        a = ab_f / ab_t
        assert posterior_variance(800, 300, schedule) == pytest.approx((1 - a) * (1 - ab_t) / (1 - ab_f), rel=1e-15)

    def test_skip_adjacent_agrees_with_single(self, schedule, rng):
        xt, x0 = rng.normal(size=6), rng.normal(size=6)
        np.testing.assert_allclose(
            reverse_step(xt, x0, 400, 399, "mean", schedule), posterior_mean(xt, x0, 400, schedule), rtol=1e-15
        )


class TestReverseStep:
    @pytest.mark.parametrize("mode", list(ReverseStepMode))
    def test_reaches_clean_at_zero(self, schedule, rng, mode):
        xt, x0 = rng.normal(size=6), rng.normal(size=6)
        out = reverse_step(xt, x0, 8, 0, mode, schedule, rng=np.random.default_rng(0))
        np.testing.assert_allclose(out, x0, atol=1e-14)

    def test_ode_on_forward_path(self, schedule):
        x0, eps = np.ones(6), np.linspace(-1, 1, 6)
        xt = forward_sample(x0, eps, 700, schedule)
        out = reverse_step(xt, x0, 700, 200, ReverseStepMode.ODE_FIRST_ORDER, schedule)
        np.testing.assert_allclose(out, forward_sample(x0, eps, 200, schedule), atol=1e-12)

    def test_stochastic_needs_rng(self, schedule):
        with pytest.raises(ValueError):
            reverse_step(np.zeros(6), np.ones(6), 500, 400, "stochastic", schedule)

    def test_stochastic_zero_scale_is_mean(self, schedule):
        out = reverse_step(np.ones(6), np.zeros(6), 500, 400, "stochastic", schedule, noise_scale=0.0)
        np.testing.assert_array_equal(out, reverse_step(np.ones(6), np.zeros(6), 500, 400, "mean", schedule))

    def test_stochastic_noise_statistics(self, schedule):
        rng = np.random.default_rng(3)
        samples = np.array(
            [reverse_step(np.zeros(6), np.zeros(6), 500, 400, "stochastic", schedule, rng, noise_scale=2.0) for _ in range(4000)]
        )
        expected = 2.0 * math.sqrt(posterior_variance(500, 400, schedule))
        np.testing.assert_allclose(samples.std(axis=0), expected, rtol=0.05)
        np.testing.assert_allclose(samples.mean(axis=0), 0.0, atol=4 * expected / math.sqrt(4000))

    def test_per_component_noise_scale(self, schedule, rng):
        scale = np.array([0, 0, 0, 1, 1, 1.0])
        out = reverse_step(np.zeros(6), np.zeros(6), 500, 400, "stochastic", schedule, rng, noise_scale=scale)
        np.testing.assert_array_equal(out[:3], 0.0)
        assert np.all(out[3:] != 0.0)

    @pytest.mark.parametrize("pair", [(400, 400), (300, 400), (1001, 3), (5, -1)])
    def test_rejects_bad_pairs(self, schedule, pair):
        with pytest.raises(ValueError):
            reverse_step(np.zeros(6), np.zeros(6), *pair, "mean", schedule)

    def test_mode_parsing(self):
        assert ReverseStepMode.parse("ode") is ReverseStepMode.ODE_FIRST_ORDER
        assert ReverseStepMode.parse("posterior_mean") is ReverseStepMode.POSTERIOR_MEAN
        assert ReverseStepMode.parse(ReverseStepMode.POSTERIOR_STOCHASTIC) is ReverseStepMode.POSTERIOR_STOCHASTIC
        with pytest.raises(ValueError):
            ReverseStepMode.parse("heun")
