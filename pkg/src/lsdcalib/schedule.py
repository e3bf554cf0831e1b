"""Cosine noise schedule and log-SNR timestep planning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOTAL_STEPS = 1000
DEFAULT_S = 0.008
LOGSNR_CLAMP = 1e-5


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed cumulative and per-step coefficients.

    ``alpha_bar`` has length ``T + 1`` and is indexed by timestep ``0..T``.
    ``alpha`` and ``beta`` are stored with the same ``0..T`` indexing for
    convenience; entry 0 is a placeholder (``alpha[0] = 1``, ``beta[0] = 0``)
    and the meaningful range is ``1..T``.
    """

    total_steps: int
    s: float
    alpha_bar: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)

    def check_t(self, t: int, lo: int = 0) -> int:
        t = int(t)
        if not lo <= t <= self.total_steps:
            raise ValueError(f"timestep {t} outside [{lo}, {self.total_steps}]")
        return t


def cosine_alpha_bar(t, total_steps: int, s: float):
    """``f(t) / f(0)`` with ``f(t) = cos(((t/T + s) / (1 + s)) * pi/2) ** 2``."""
    t = np.asarray(t, dtype=np.float64)
    f = np.cos((t / total_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
    f0 = np.cos(s / (1.0 + s) * np.pi / 2.0) ** 2
    return f / f0


def build_cosine_schedule(
    total_steps: int = DEFAULT_TOTAL_STEPS, s: float = DEFAULT_S
) -> NoiseSchedule:
    if int(total_steps) != total_steps or total_steps < 1:
        raise ValueError(f"total_steps must be a positive integer, got {total_steps!r}")
    if not np.isfinite(s) or s <= 0:
        raise ValueError(f"s must be positive, got {s!r}")
    total_steps = int(total_steps)
    alpha_bar = cosine_alpha_bar(np.arange(total_steps + 1), total_steps, s)
    alpha_bar[0] = 1.0
    np.clip(alpha_bar, 0.0, 1.0, out=alpha_bar)

    alpha = np.ones(total_steps + 1)
    alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
    beta = 1.0 - alpha
    beta[0] = 0.0
    for arr in (alpha_bar, alpha, beta):
        arr.setflags(write=False)
    return NoiseSchedule(total_steps, float(s), alpha_bar, alpha, beta)


def log_snr(schedule: NoiseSchedule) -> np.ndarray:
    """``ln(abar / (1 - abar))`` for ``t = 0..T`` with abar clamped to [1e-5, 1 - 1e-5]."""
    ab = np.clip(schedule.alpha_bar, LOGSNR_CLAMP, 1.0 - LOGSNR_CLAMP)
    return np.log(ab / (1.0 - ab))


def logsnr_timesteps(schedule: NoiseSchedule, nfe: int) -> np.ndarray:
    """Pick ``nfe`` strictly descending timesteps evenly spaced in log-SNR.

    Targets are ``nfe`` points spaced uniformly between ``lambda(T)`` and
    ``lambda(1)``.  They are matched greedily from the noisy end: each target
    takes the timestep whose log-SNR is closest (ties go to the larger t) among
    those below the previous pick that still leave room for the remaining
    targets.  This keeps the plan free of duplicates even where the clamp
    flattens log-SNR, and always ends at ``t = 1``.
    """
    T = schedule.total_steps
    if int(nfe) != nfe or not 1 <= nfe <= T:
        raise ValueError(f"nfe must be an integer in [1, {T}], got {nfe!r}")
    nfe = int(nfe)
    lam = log_snr(schedule)
    targets = np.linspace(lam[T], lam[1], nfe)
    steps = []
    upper = T
    for k, target in enumerate(targets):
        lower = nfe - k
        cand = np.arange(upper, lower - 1, -1)
        # argmin returns the first minimum, i.e. the largest t on ties
        pick = int(cand[np.argmin(np.abs(lam[cand] - target))])
        steps.append(pick)
        upper = pick - 1
    steps[-1] = 1
    return np.asarray(steps, dtype=np.int64)
