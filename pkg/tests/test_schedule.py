import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdcalib.schedule import build_cosine_schedule, cosine_alpha_bar, log_snr, logsnr_timesteps


def mp_alpha_bar(t, T=1000, s=0.008):
    with mpmath.workdps(50):
        f = lambda u: mpmath.cos((mpmath.mpf(u) / T + mpmath.mpf(s)) / (1 + mpmath.mpf(s)) * mpmath.pi / 2) ** 2
        return f(t) / f(0)


class TestCosineSchedule:
    def test_boundaries(self, schedule):
        assert schedule.alpha_bar[0] == 1.0
        assert schedule.alpha_bar[-1] <= 1e-10
        assert np.all(np.diff(schedule.alpha_bar) < 0)

    @pytest.mark.parametrize("t", [1, 10, 250, 500, 750, 999])
    def test_matches_extended_precision(self, schedule, t):
        assert schedule.alpha_bar[t] == pytest.approx(float(mp_alpha_bar(t)), rel=1e-13, abs=1e-16)

    def test_midpoint_value(self, schedule):
        # cos^2 at (0.5 + s)/(1 + s) of a quarter turn, over the t = 0 value
        assert schedule.alpha_bar[500] == pytest.approx(0.4938435904406377, abs=1e-15)

    def test_product_consistency(self, schedule):
        prod = np.cumprod(schedule.alpha[1:])
        np.testing.assert_allclose(prod, schedule.alpha_bar[1:], atol=1e-12, rtol=0)

    def test_beta_in_unit_interval(self, schedule):
        assert schedule.beta[0] == 0.0
        assert np.all((schedule.beta[1:] > 0) & (schedule.beta[1:] <= 1))
        np.testing.assert_array_equal(schedule.beta, 1.0 - schedule.alpha)

    def test_arrays_are_read_only(self, schedule):
        with pytest.raises(ValueError):
            schedule.alpha_bar[3] = 0.5

    @pytest.mark.parametrize("T,s", [(0, 0.008), (10, 0.0), (10, -1.0), (2.5, 0.008), (10, float("nan"))])
    def test_rejects_bad_parameters(self, T, s):
        with pytest.raises(ValueError):
            build_cosine_schedule(T, s)

    def test_check_t(self, schedule):
        assert schedule.check_t(0) == 0
        with pytest.raises(ValueError):
            schedule.check_t(1001)
        with pytest.raises(ValueError):
            schedule.check_t(0, lo=1)

    @given(st.integers(2, 5000), st.floats(1e-4, 0.1))
    @settings(max_examples=50, deadline=None)
    def test_monotone_for_any_parameters(self, T, s):
        ab = build_cosine_schedule(T, s).alpha_bar
        assert ab[0] == 1.0 and np.all(np.diff(ab) <= 0) and np.all(ab >= 0)

    def test_vectorised_formula(self):
        t = np.array([0, 100, 1000])
        expected = np.array([float(mp_alpha_bar(int(u))) for u in t])
        # at t = T the cosine is evaluated next to its root, so only absolute accuracy is meaningful
        np.testing.assert_allclose(cosine_alpha_bar(t, 1000, 0.008), expected, rtol=1e-13, atol=1e-16)


class TestLogSnrPlan:
    def test_default_plan(self, schedule):
        np.testing.assert_array_equal(
            logsnr_timesteps(schedule, 10), [1000, 993, 978, 926, 764, 418, 141, 38, 8, 1]
        )

    def test_log_snr_clamped(self, schedule):
        lam = log_snr(schedule)
        bound = np.log((1 - 1e-5) / 1e-5)
        assert lam[0] == pytest.approx(bound)
        assert lam[-1] == pytest.approx(-bound)
        assert np.all(np.diff(lam) <= 0)

    @pytest.mark.parametrize("nfe", [1, 2, 3, 5, 10, 50, 200, 1000])
    def test_plan_shape(self, schedule, nfe):
        plan = logsnr_timesteps(schedule, nfe)
        assert len(plan) == nfe
        assert plan[-1] == 1
        assert np.all(np.diff(plan) < 0)
        assert plan[0] <= 1000

    def test_full_plan_is_every_step(self, schedule):
        np.testing.assert_array_equal(logsnr_timesteps(schedule, 1000), np.arange(1000, 0, -1))

    @given(st.integers(1, 300))
    @settings(max_examples=60, deadline=None)
    def test_plan_property(self, nfe):
        plan = logsnr_timesteps(build_cosine_schedule(300), nfe)
        assert len(plan) == nfe and plan[-1] == 1 and np.all(np.diff(plan) < 0)

    def test_roughly_uniform_in_log_snr(self, schedule):
        plan = logsnr_timesteps(schedule, 10)
        lam = log_snr(schedule)[plan[:-1]]
        gaps = np.diff(lam)
        assert gaps.std() / gaps.mean() < 0.2

    @pytest.mark.parametrize("nfe", [0, 1001, 2.5])
    def test_rejects_bad_nfe(self, schedule, nfe):
        with pytest.raises(ValueError):
            logsnr_timesteps(schedule, nfe)
