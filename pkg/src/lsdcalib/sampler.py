"""Forward noising and reverse denoising steps on twist-valued states."""

from __future__ import annotations

import enum
import math

import numpy as np

from .schedule import NoiseSchedule


class ReverseStepMode(enum.Enum):
    POSTERIOR_MEAN = "posterior_mean"
    POSTERIOR_STOCHASTIC = "posterior_stochastic"
    ODE_FIRST_ORDER = "ode_first_order"

    @classmethod
    def parse(cls, value) -> "ReverseStepMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"mean": "posterior_mean", "stochastic": "posterior_stochastic", "ode": "ode_first_order"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown reverse step mode {value!r}") from None


def forward_sample(x0, eps, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``."""
    t = schedule.check_t(t)
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * np.asarray(x0, dtype=np.float64) + math.sqrt(1.0 - ab) * np.asarray(
        eps, dtype=np.float64
    )


def _pair_coefficients(t_from: int, t_to: int, schedule: NoiseSchedule):
    if not (schedule.total_steps >= t_from > t_to >= 0):
        raise ValueError(
            f"invalid reverse step {t_from} -> {t_to} for T = {schedule.total_steps}"
        )
    ab_from = schedule.alpha_bar[t_from]
    ab_to = schedule.alpha_bar[t_to]
    if t_from == t_to + 1:
        a = schedule.alpha[t_from]
    else:
        a = ab_from / ab_to
    return ab_from, ab_to, a


def _mean(xt, x0_hat, ab_from, ab_to, a):
    denom = 1.0 - ab_from
    c_t = math.sqrt(a) * (1.0 - ab_to) / denom
    c_0 = math.sqrt(ab_to) * (1.0 - a) / denom
    return c_t * np.asarray(xt, dtype=np.float64) + c_0 * np.asarray(x0_hat, dtype=np.float64)


def posterior_mean(xt, x0_hat, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Gaussian posterior mean of ``x_{t-1}`` given ``x_t`` and a clean estimate."""
    t = schedule.check_t(t, lo=1)
    return _mean(xt, x0_hat, *_pair_coefficients(t, t - 1, schedule))


def posterior_variance(t_from: int, t_to: int, schedule: NoiseSchedule) -> float:
    ab_from, ab_to, a = _pair_coefficients(int(t_from), int(t_to), schedule)
    return float((1.0 - a) * (1.0 - ab_to) / (1.0 - ab_from))


def posterior_sigma(t: int, schedule: NoiseSchedule) -> float:
    """Posterior variance ``(1 - alpha_t)(1 - abar_{t-1}) / (1 - abar_t)``."""
    t = schedule.check_t(t, lo=1)
    return posterior_variance(t, t - 1, schedule)


def reverse_step(
    xt,
    x0_hat,
    t_from: int,
    t_to: int,
    mode: ReverseStepMode,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    noise_scale=1.0,
) -> np.ndarray:
    """Move the state from ``t_from`` to ``t_to`` given a clean estimate.

    Non-adjacent pairs use the usual skip-step reduction: the pair is treated
    as adjacent with ``alpha = abar_from / abar_to``.  ``noise_scale``
    multiplies the stochastic term (scalar or per-component); it is ignored by
    the deterministic modes.
    """
    t_from, t_to = int(t_from), int(t_to)
    ab_from, ab_to, a = _pair_coefficients(t_from, t_to, schedule)
    mode = ReverseStepMode.parse(mode)

    if mode is ReverseStepMode.ODE_FIRST_ORDER:
        x0_hat = np.asarray(x0_hat, dtype=np.float64)
        eps_hat = (np.asarray(xt, dtype=np.float64) - math.sqrt(ab_from) * x0_hat) / math.sqrt(
            1.0 - ab_from
        )
        return math.sqrt(ab_to) * x0_hat + math.sqrt(1.0 - ab_to) * eps_hat

    mean = _mean(xt, x0_hat, ab_from, ab_to, a)
    if mode is ReverseStepMode.POSTERIOR_MEAN:
        return mean

    var = (1.0 - a) * (1.0 - ab_to) / (1.0 - ab_from)
    scale = np.asarray(noise_scale, dtype=np.float64) * math.sqrt(var)
    if not np.any(scale):
        return mean
    if rng is None:
        raise ValueError("stochastic reverse step needs a random generator")
    return mean + scale * rng.standard_normal(mean.shape)
