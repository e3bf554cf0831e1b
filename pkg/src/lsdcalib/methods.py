"""The four iteration strategies: Single, NaIter, LSD and NLSD.

Every runner takes a *denoiser*: a callable mapping a current extrinsic to a
predicted left-correction twist (normally a
:class:`~lsdcalib.surrogate.BoundSurrogate`).  Each returns a
:class:`Trajectory` with one recorded estimate per function evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import lie
from .errors import SingularityError
from .sampler import ReverseStepMode, reverse_step
from .schedule import NoiseSchedule, logsnr_timesteps
from .surrogate import SurrogateContext, denoise

Denoiser = Callable[[np.ndarray], np.ndarray]

METHOD_KINDS = ("single", "naiter", "lsd", "nlsd")


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    nfe: int = 10
    mode: ReverseStepMode = ReverseStepMode.POSTERIOR_MEAN
    name: str = ""
    # per-component (rho, phi) scale of the NLSD reverse noise; None means
    # "derive from the perturbation prior" (resolved by the bench)
    nlsd_perturb_sigma: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}; expected one of {METHOD_KINDS}")
        if int(self.nfe) != self.nfe or self.nfe < 1:
            raise ValueError("nfe must be a positive integer")
        if self.kind == "single":
            object.__setattr__(self, "nfe", 1)
        object.__setattr__(self, "mode", ReverseStepMode.parse(self.mode))
        if not self.name:
            object.__setattr__(self, "name", self._default_name())
        if self.nlsd_perturb_sigma is not None:
            sig = tuple(float(v) for v in np.broadcast_to(self.nlsd_perturb_sigma, (6,)))
            if any(v < 0 for v in sig):
                raise ValueError("nlsd_perturb_sigma must be >= 0")
            object.__setattr__(self, "nlsd_perturb_sigma", sig)

    def _default_name(self) -> str:
        if self.kind == "lsd" and self.mode is not ReverseStepMode.POSTERIOR_MEAN:
            return f"lsd_{self.mode.value}"
        return self.kind


@dataclass
class Trajectory:
    """Recorded estimates, one per function evaluation.

    ``flagged`` is set when a run was aborted by a logarithm singularity; the
    remaining estimates are then padded with the last valid one.
    """

    estimates: list[np.ndarray]
    final: np.ndarray
    steps: list[int] = field(default_factory=list)
    flagged: bool = False

    def __len__(self) -> int:
        return len(self.estimates)


def as_denoiser(obj, rng: np.random.Generator | None = None) -> Denoiser:
    """Accept a denoiser callable or a bare :class:`SurrogateContext`."""
    if isinstance(obj, SurrogateContext):
        return lambda current: denoise(obj, current, rng)
    return obj


def run_single(denoiser: Denoiser, T0: np.ndarray, rng=None) -> Trajectory:
    """One-shot correction ``exp(D(T0)) @ T0``."""
    denoiser = as_denoiser(denoiser, rng)
    est = lie.compose(lie.exp_map(denoiser(T0)), T0)
    return Trajectory([est], est, steps=[1])


def run_naiter(denoiser: Denoiser, T0: np.ndarray, nfe: int, rng=None) -> Trajectory:
    """Feed each corrected estimate back into the calibrator ``nfe`` times."""
    denoiser = as_denoiser(denoiser, rng)
    if nfe < 1:
        raise ValueError("nfe must be >= 1")
    est = np.array(T0, dtype=np.float64)
    out = []
    for _ in range(nfe):
        est = lie.compose(lie.exp_map(denoiser(est)), est)
        out.append(est)
    return Trajectory(out, out[-1], steps=list(range(1, nfe + 1)))


def _clean_estimate(denoiser: Denoiser, x_t: np.ndarray, T0: np.ndarray) -> np.ndarray:
    G_xt = lie.exp_map(x_t)
    delta = denoiser(lie.compose(G_xt, T0))
    return lie.log_map(lie.compose(lie.exp_map(delta), G_xt))


def _plan_pairs(plan) -> list[tuple[int, int]]:
    plan = [int(t) for t in plan]
    if not plan or any(a <= b for a, b in zip(plan, plan[1:])) or plan[-1] < 1:
        raise ValueError(f"plan must be strictly descending positive timesteps, got {plan}")
    return list(zip(plan, plan[1:] + [0]))


def _pad(estimates: list[np.ndarray], n: int, fallback: np.ndarray) -> list[np.ndarray]:
    last = estimates[-1] if estimates else fallback
    return estimates + [last] * (n - len(estimates))


def run_lsd(
    denoiser: Denoiser,
    T0: np.ndarray,
    plan,
    schedule: NoiseSchedule,
    mode: ReverseStepMode = ReverseStepMode.POSTERIOR_MEAN,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Linear surrogate diffusion on the twist ``x`` with ``x_T = 0``.

    Each evaluation forms the clean estimate ``x0_hat`` from the calibrator,
    records ``exp(x0_hat) @ T0`` and takes one reverse step.  The result is
    ``exp(x_0) @ T0``.
    """
    denoiser = as_denoiser(denoiser, rng)
    pairs = _plan_pairs(plan)
    x = np.zeros(6)
    estimates = []
    try:
        for t_from, t_to in pairs:
            x0_hat = _clean_estimate(denoiser, x, T0)
            estimates.append(lie.compose(lie.exp_map(x0_hat), T0))
            x = reverse_step(x, x0_hat, t_from, t_to, mode, schedule, rng)
        final = lie.compose(lie.exp_map(x), T0)
    except SingularityError:
        estimates = _pad(estimates, len(pairs), T0)
        return Trajectory(estimates, estimates[-1], [p[0] for p in pairs], flagged=True)
    return Trajectory(estimates, final, [p[0] for p in pairs])


def run_nlsd(
    denoiser: Denoiser,
    T0: np.ndarray,
    plan,
    schedule: NoiseSchedule,
    sigma=0.0,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Non-linear surrogate diffusion with the state kept as a transform ``H_t``.

    ``H_T = T0``.  Each step maps ``H_t`` to ``xi_t = log(H_t @ inv(T0))``,
    forms the clean estimate, combines the two with the posterior mean and
    maps back: ``H_{t-1} = exp(mu + sqrt(Sigma) * sigma * eta) @ T0``.  The
    recorded estimate is the clean-state transform ``exp(xi0_hat) @ T0``.
    """
    denoiser = as_denoiser(denoiser, rng)
    pairs = _plan_pairs(plan)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (6,))
    mode = ReverseStepMode.POSTERIOR_STOCHASTIC if np.any(sigma) else ReverseStepMode.POSTERIOR_MEAN
    T0_inv = lie.inverse(T0)
    H = np.array(T0, dtype=np.float64)
    estimates = []
    try:
        for t_from, t_to in pairs:
            xi_t = lie.log_map(lie.compose(H, T0_inv))
            xi0_hat = _clean_estimate(denoiser, xi_t, T0)
            estimates.append(lie.compose(lie.exp_map(xi0_hat), T0))
            mu = reverse_step(xi_t, xi0_hat, t_from, t_to, mode, schedule, rng, noise_scale=sigma)
            H = lie.compose(lie.exp_map(mu), T0)
    except SingularityError:
        estimates = _pad(estimates, len(pairs), T0)
        return Trajectory(estimates, estimates[-1], [p[0] for p in pairs], flagged=True)
    return Trajectory(estimates, H, [p[0] for p in pairs])


def nlsd_forward(
    H0: np.ndarray, T0: np.ndarray, t: int, schedule: NoiseSchedule, eta=None
) -> np.ndarray:
    """Reference forward process ``exp(sqrt(1-abar) eta) @ exp(sqrt(abar) log(H0 inv(T0))) @ T0``."""
    t = schedule.check_t(t)
    ab = schedule.alpha_bar[t]
    xi0 = lie.log_map(lie.compose(H0, lie.inverse(T0)))
    interp = lie.compose(lie.exp_map(np.sqrt(ab) * xi0), T0)
    if eta is None:
        return interp
    return lie.compose(lie.exp_map(np.sqrt(1.0 - ab) * np.asarray(eta, dtype=np.float64)), interp)


def run_method(
    spec: MethodSpec,
    denoiser: Denoiser,
    T0: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    plan=None,
) -> Trajectory:
    if spec.kind == "single":
        return run_single(denoiser, T0)
    if spec.kind == "naiter":
        return run_naiter(denoiser, T0, spec.nfe)
    if plan is None:
        plan = logsnr_timesteps(schedule, spec.nfe)
    if spec.kind == "lsd":
        return run_lsd(denoiser, T0, plan, schedule, spec.mode, rng)
    sigma = spec.nlsd_perturb_sigma if spec.nlsd_perturb_sigma is not None else 0.0
    return run_nlsd(denoiser, T0, plan, schedule, sigma, rng)
