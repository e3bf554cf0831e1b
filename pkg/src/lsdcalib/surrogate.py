"""Surrogate denoisers.

A base calibrator takes the scene conditions and a current extrinsic guess and
predicts a left correction twist.  Trained networks are replaced here by four
synthetic calibrators:

``oracle``
    exact ``log(T_gt @ inv(current))``.
``contraction``
    ``lam * delta + N(0, sigma^2)`` per component.
``range_dependent``
    gain ``lam0 * exp(-k |delta|)`` and noise ``sigma0 * (1 + |delta|)``; a
    calibrator that gets worse the further it starts from the answer.
``reprojection``
    a few Huber-weighted Gauss-Newton steps on pixel residuals.

All extrinsic-independent work happens in :func:`prepare`, whose result is
reused across iterations (intermediate buffering).  The calibrators have no
timestep input.
"""

from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from . import kernels, lie
from .errors import ContractError
from .scene import NEAR_PLANE, Scene
from .schedule import NoiseSchedule
from .sampler import forward_sample

KINDS = ("oracle", "contraction", "range_dependent", "reprojection")

# normal equations with a worse reciprocal condition number get damped
RCOND_LIMIT = 1e-12
LM_BOOST = 10.0


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str = "oracle"
    name: str = ""
    lam: float = 0.5
    sigma: float = 0.0
    lam0: float = 0.9
    k: float = 2.0
    sigma0: float = 0.01
    max_gn_iters: int = 3
    huber_delta: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; expected one of {KINDS}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)
        if not 0.0 <= self.lam <= 1.0 or not 0.0 <= self.lam0 <= 1.0:
            raise ValueError("gains must be in [0, 1]")
        if self.sigma < 0 or self.sigma0 < 0 or self.k < 0:
            raise ValueError("noise scales and k must be >= 0")
        if self.max_gn_iters < 1 or self.huber_delta <= 0:
            raise ValueError("max_gn_iters must be >= 1 and huber_delta > 0")

    def to_dict(self) -> dict:
        return asdict(self)


class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def increment(self) -> None:
        with self._lock:
            self.value += 1


#: process-wide number of :func:`prepare` calls, for buffering tests
prepare_calls = _Counter()


@dataclass(frozen=True, eq=False)
class SurrogateContext:
    """Buffered, extrinsic-independent state for one scene.

    Only valid for the scene it was prepared from.  For the reprojection
    calibrator ``tables`` holds the correspondence arrays; other kinds keep
    just the ground-truth reference.
    """

    scene_id: str
    spec: SurrogateSpec
    gt_extrinsic: np.ndarray
    tables: dict[str, Any]

    @property
    def num_correspondences(self) -> int:
        return int(self.tables.get("points", np.empty((0, 3))).shape[0])


def prepare(scene: Scene, spec: SurrogateSpec) -> SurrogateContext:
    """Do all work that does not depend on the current extrinsic."""
    prepare_calls.increment()
    tables: dict[str, Any] = {}
    if spec.kind == "reprojection":
        tables = _build_correspondences(scene)
    return SurrogateContext(
        scene_id=scene.scene_id,
        spec=spec,
        gt_extrinsic=scene.gt_extrinsic,
        tables=tables,
    )


def _build_correspondences(scene: Scene) -> dict[str, Any]:
    # one record per observation, validated against the point cloud
    K = scene.intrinsics
    n_pts = scene.num_points
    seen: dict[int, int] = {}
    rows_pts, rows_pix = [], []
    for idx, pix in scene.observations():
        if not 0 <= idx < n_pts:
            raise ContractError(f"observation refers to missing point {idx}")
        u, v = float(pix[0]), float(pix[1])
        if not (math.isfinite(u) and math.isfinite(v)):
            continue
        if idx in seen:
            # keep the first observation of a point
            continue
        seen[idx] = len(rows_pts)
        rows_pts.append(scene.points[idx])
        rows_pix.append((u, v))
    points = np.ascontiguousarray(np.array(rows_pts, dtype=np.float64).reshape(-1, 3))
    pixels = np.ascontiguousarray(np.array(rows_pix, dtype=np.float64).reshape(-1, 2))
    points.setflags(write=False)
    pixels.setflags(write=False)
    return {
        "points": points,
        "pixels": pixels,
        "fx": K.fx,
        "fy": K.fy,
        "cx": K.cx,
        "cy": K.cy,
    }


def check_context(ctx: SurrogateContext, scene: Scene) -> None:
    if ctx.scene_id != scene.scene_id or not np.array_equal(ctx.gt_extrinsic, scene.gt_extrinsic):
        raise ContractError(f"context for {ctx.scene_id!r} used with scene {scene.scene_id!r}")


class BoundSurrogate:
    """Base calibrator bound to one scene, as seen by the iteration methods.

    With ``buffering`` the context is prepared on the first call and reused;
    without it every call prepares a fresh context.  Outputs are identical
    either way because :func:`prepare` is deterministic.
    """

    def __init__(self, scene: Scene, spec: SurrogateSpec, rng=None, buffering: bool = True):
        self.scene = scene
        self.spec = spec
        self.rng = rng
        self.buffering = buffering
        self.prepare_count = 0
        self.calls = 0
        self.flagged_calls = 0
        self._ctx: SurrogateContext | None = None

    def context(self) -> SurrogateContext:
        if self._ctx is None or not self.buffering:
            self._ctx = prepare(self.scene, self.spec)
            self.prepare_count += 1
        check_context(self._ctx, self.scene)
        return self._ctx

    def __call__(self, current: np.ndarray) -> np.ndarray:
        out, ok = denoise_with_status(self.context(), current, self.rng)
        self.calls += 1
        if not ok:
            self.flagged_calls += 1
        return out


def true_correction(ctx: SurrogateContext, current: np.ndarray) -> np.ndarray:
    return lie.log_map(lie.compose(ctx.gt_extrinsic, lie.inverse(current)))


def denoise_with_status(
    ctx: SurrogateContext, current: np.ndarray, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, bool]:
    """Like :func:`denoise` but also reports whether the estimate is trustworthy.

    The flag is False only when the reprojection solver met singular normal
    equations (even after damping) and returned a zero correction.
    """
    spec = ctx.spec
    if spec.kind == "reprojection":
        return _reprojection_correction(ctx, current)
    delta = true_correction(ctx, current)
    if spec.kind == "oracle":
        return delta, True
    if spec.kind == "contraction":
        gain, noise = spec.lam, spec.sigma
    else:
        mag = float(np.linalg.norm(delta))
        gain = spec.lam0 * math.exp(-spec.k * mag)
        noise = spec.sigma0 * (1.0 + mag)
    out = gain * delta
    if noise > 0:
        if rng is None:
            raise ValueError(f"{spec.kind} surrogate with noise needs a random generator")
        out = out + noise * rng.standard_normal(6)
    return out, True


def denoise(ctx: SurrogateContext, current: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Predicted left correction twist ``~ log(T_gt @ inv(current))``."""
    return denoise_with_status(ctx, current, rng)[0]


def _reprojection_correction(ctx: SurrogateContext, current: np.ndarray) -> tuple[np.ndarray, bool]:
    tab = ctx.tables
    spec = ctx.spec
    T = np.array(current, dtype=np.float64)
    for _ in range(spec.max_gn_iters):
        H, g, _, n_used = kernels.gn_normal_equations(
            tab["points"], tab["pixels"], T[:3, :3], T[:3, 3],
            tab["fx"], tab["fy"], tab["cx"], tab["cy"], spec.huber_delta, NEAR_PLANE,
        )  # fmt: skip
        step = None if n_used < 3 else _solve_damped(H, g)
        if step is None:
            if np.array_equal(T, current):
                return np.zeros(6), False
            break
        T = lie.compose(lie.exp_map(step), T)
    return lie.log_map(lie.compose(T, lie.inverse(current))), True


def _solve_damped(H: np.ndarray, g: np.ndarray):
    for damping in (0.0, LM_BOOST):
        A = H + damping * np.diag(np.diag(H))
        if np.linalg.cond(A) * RCOND_LIMIT < 1.0:
            return np.linalg.solve(A, -g)
    return None


def surrogate_x0(
    ctx: SurrogateContext, x_t: np.ndarray, T0: np.ndarray, rng: np.random.Generator | None = None,
    *, denoiser=None,
) -> np.ndarray:
    """Clean-state estimate ``log(exp(D(exp(x_t) @ T0)) @ exp(x_t))``.

    ``denoiser`` overrides the base calibrator call (a ``current -> twist``
    callable); it is how the method runners thread buffering and status
    tracking through.
    """
    G_xt = lie.exp_map(x_t)
    noisy = lie.compose(G_xt, T0)
    delta = denoiser(noisy) if denoiser is not None else denoise(ctx, noisy, rng)
    return lie.log_map(lie.compose(lie.exp_map(delta), G_xt))


def l1_loss(x0_hat, x0) -> float:
    return float(np.sum(np.abs(np.asarray(x0_hat) - np.asarray(x0))))


def training_targets(
    scene: Scene, T0: np.ndarray, schedule: NoiseSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, int]:
    """One training pair ``(x_t, x_0, t)`` with ``t`` uniform in ``1..T`` and zero noise."""
    x0 = lie.log_map(lie.compose(scene.gt_extrinsic, lie.inverse(T0)))
    t = int(rng.integers(1, schedule.total_steps + 1))
    x_t = forward_sample(x0, np.zeros(6), t, schedule)
    return x_t, x0, t
