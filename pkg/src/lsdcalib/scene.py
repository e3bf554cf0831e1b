"""Synthetic camera-LiDAR calibration scenes.

A scene holds LiDAR-frame points, a pinhole camera, the ground-truth
LiDAR-to-camera extrinsic and noisy 2D observations of the points.  The
observations stand in for the image side of a real calibration problem.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, lie

NEAR_PLANE = 0.1

# LiDAR (x forward, y left, z up) to camera (x right, y down, z forward)
LIDAR_TO_CAMERA_AXES = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 718.0
    fy: float = 718.0
    cx: float = 607.0
    cy: float = 185.0
    width: int = 1241
    height: int = 376

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class SceneConfig:
    num_points: int = 500
    depth_min: float = 3.0
    depth_max: float = 60.0
    pixel_noise_sigma: float = 1.0
    outlier_fraction: float = 0.05
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    # ground truth = small random rotation/translation around the nominal mount
    gt_translation: tuple[float, float, float] = (0.0, -0.08, -0.27)
    gt_jitter_deg: float = 2.0
    gt_jitter_m: float = 0.05

    def validate(self) -> None:
        if self.num_points < 1:
            raise ValueError("num_points must be >= 1")
        if not (NEAR_PLANE < self.depth_min < self.depth_max) or not math.isfinite(self.depth_max):
            raise ValueError(
                f"empty frustum: need {NEAR_PLANE} < depth_min < depth_max, "
                f"got [{self.depth_min}, {self.depth_max}]"
            )
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel_noise_sigma must be >= 0")
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise ValueError("outlier_fraction must be in [0, 0.5)")
        if self.gt_jitter_deg < 0 or self.gt_jitter_m < 0:
            raise ValueError("gt jitter must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gt_translation"] = list(self.gt_translation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "intrinsics" in d and isinstance(d["intrinsics"], dict):
            d["intrinsics"] = CameraIntrinsics(**d["intrinsics"])
        if "gt_translation" in d:
            d["gt_translation"] = tuple(float(v) for v in d["gt_translation"])
        return cls(**d)


@dataclass(frozen=True)
class PerturbationSpec:
    """Per-axis uniform ranges: Euler angles in degrees, translation in meters."""

    rot_range: float = 15.0
    trans_range: float = 0.15

    def __post_init__(self):
        if self.rot_range < 0 or self.trans_range < 0:
            raise ValueError("perturbation ranges must be >= 0")
        if self.rot_range >= 90.0:
            raise ValueError("rot_range must be below 90 degrees")


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable calibration scenario.

    ``observations`` pair ``obs_index[i]`` (index into ``points``) with
    ``obs_pixels[i]``.  ``true_pixels`` are the noise-free projections under
    the ground-truth extrinsic and ``is_outlier`` marks observations replaced by
    uniform clutter.
    """

    scene_id: str
    points: np.ndarray
    gt_extrinsic: np.ndarray
    intrinsics: CameraIntrinsics
    obs_index: np.ndarray
    obs_pixels: np.ndarray
    true_pixels: np.ndarray
    is_outlier: np.ndarray
    pixel_noise_sigma: float
    outlier_fraction: float

    @property
    def num_points(self) -> int:
        return int(self.points.shape[0])

    def observations(self) -> list[tuple[int, np.ndarray]]:
        return [(int(i), px) for i, px in zip(self.obs_index, self.obs_pixels)]


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def ground_truth_extrinsic(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    jitter = rng.uniform(-1.0, 1.0, size=3) * config.gt_jitter_deg
    R = lie.rotation_from_euler(*jitter) @ LIDAR_TO_CAMERA_AXES
    t = np.asarray(config.gt_translation) + rng.uniform(-1.0, 1.0, size=3) * config.gt_jitter_m
    return lie.make_transform(R, t)


def generate_scene(config: SceneConfig, rng: np.random.Generator, scene_id: str = "scene") -> Scene:
    """Sample a scene whose points fill the camera frustum between the depth bounds.

    Points are uniform in frustum volume: pixel position uniform over the
    image and depth drawn with density proportional to depth squared.
    """
    config.validate()
    K = config.intrinsics
    n = int(config.num_points)
    gt = ground_truth_extrinsic(config, rng)

    # keep half a pixel away from the border so true projections are inside
    u = rng.uniform(0.5, K.width - 0.5, size=n)
    v = rng.uniform(0.5, K.height - 0.5, size=n)
    a3, b3 = config.depth_min**3, config.depth_max**3
    z = np.cbrt(a3 + rng.uniform(0.0, 1.0, size=n) * (b3 - a3))
    cam = np.stack([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z], axis=1)
    gt_inv = lie.inverse(gt)
    points = cam @ gt_inv[:3, :3].T + gt_inv[:3, 3]

    true_pixels = project_points(points, gt, K)
    pixels = true_pixels + rng.normal(0.0, 1.0, size=(n, 2)) * config.pixel_noise_sigma
    n_out = int(round(config.outlier_fraction * n))
    is_outlier = np.zeros(n, dtype=bool)
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        is_outlier[idx] = True
        pixels[idx, 0] = rng.uniform(0.0, K.width, size=n_out)
        pixels[idx, 1] = rng.uniform(0.0, K.height, size=n_out)

    obs_index = np.arange(n, dtype=np.int64)
    _freeze(points, gt, obs_index, pixels, true_pixels, is_outlier)
    return Scene(
        scene_id=scene_id,
        points=points,
        gt_extrinsic=gt,
        intrinsics=K,
        obs_index=obs_index,
        obs_pixels=pixels,
        true_pixels=true_pixels,
        is_outlier=is_outlier,
        pixel_noise_sigma=float(config.pixel_noise_sigma),
        outlier_fraction=float(config.outlier_fraction),
    )


def sample_perturbation(spec: PerturbationSpec, rng: np.random.Generator) -> np.ndarray:
    """Twist of a random left perturbation; the initial guess is ``exp(xi) @ T_gt``.

    Euler angles are uniform in ``+-rot_range`` per axis and the translation is
    uniform in ``+-trans_range`` per axis.
    """
    euler = rng.uniform(-1.0, 1.0, size=3) * spec.rot_range
    trans = rng.uniform(-1.0, 1.0, size=3) * spec.trans_range
    if not np.any(euler) and not np.any(trans):
        return np.zeros(6)
    return lie.log_map(lie.make_transform(lie.rotation_from_euler(*euler), trans))


def initial_extrinsic(scene: Scene, xi_pert: np.ndarray) -> np.ndarray:
    return lie.compose(lie.exp_map(xi_pert), scene.gt_extrinsic)


def project_point(p, T: np.ndarray, K: CameraIntrinsics):
    """Pixel ``(u, v)`` of a LiDAR point, or ``None`` if behind the near plane or off-image."""
    q = T[:3, :3] @ np.asarray(p, dtype=np.float64) + T[:3, 3]
    if q[2] <= NEAR_PLANE:
        return None
    u = K.fx * q[0] / q[2] + K.cx
    v = K.fy * q[1] / q[2] + K.cy
    if not (0.0 <= u < K.width and 0.0 <= v < K.height):
        return None
    return np.array([u, v])


def project_points(points: np.ndarray, T: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorised projection without visibility culling; behind-plane rows are NaN."""
    q = np.asarray(points, dtype=np.float64) @ T[:3, :3].T + T[:3, 3]
    out = np.full((q.shape[0], 2), np.nan)
    ok = q[:, 2] > NEAR_PLANE
    out[ok, 0] = K.fx * q[ok, 0] / q[ok, 2] + K.cx
    out[ok, 1] = K.fy * q[ok, 1] / q[ok, 2] + K.cy
    return out


def render_projection_map(scene: Scene, T: np.ndarray) -> np.ndarray:
    """Depth image (height x width) of the scene points under extrinsic ``T``.

    The nearest depth wins per pixel; empty pixels are NaN.
    """
    K = scene.intrinsics
    if scene.num_points == 0:
        return np.full((K.height, K.width), np.nan)
    q = scene.points @ T[:3, :3].T + T[:3, 3]
    front = q[:, 2] > NEAR_PLANE
    q = q[front]
    u = K.fx * q[:, 0] / q[:, 2] + K.cx
    v = K.fy * q[:, 1] / q[:, 2] + K.cy
    return kernels.zbuffer(np.floor(u).astype(np.int64), np.floor(v).astype(np.int64), q[:, 2], K.width, K.height)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

SCENE_SCHEMA = "lsdcalib.scene/1"


def _dump(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), sort_keys=True)


def scene_records(scene: Scene, extra: dict | None = None) -> list[str]:
    header = {
        "type": "scene",
        "schema": SCENE_SCHEMA,
        "scene_id": scene.scene_id,
        "intrinsics": asdict(scene.intrinsics),
        "gt_extrinsic": scene.gt_extrinsic.tolist(),
        "pixel_noise_sigma": scene.pixel_noise_sigma,
        "outlier_fraction": scene.outlier_fraction,
        "num_points": scene.num_points,
    }
    if extra:
        header.update(extra)
    lines = [_dump(header)]
    for i, p in enumerate(scene.points):
        lines.append(_dump({"type": "point", "i": i, "xyz": p.tolist()}))
    for k in range(scene.obs_index.shape[0]):
        lines.append(
            _dump(
                {
                    "type": "obs",
                    "i": int(scene.obs_index[k]),
                    "uv": scene.obs_pixels[k].tolist(),
                    "true_uv": scene.true_pixels[k].tolist(),
                    "outlier": bool(scene.is_outlier[k]),
                }
            )
        )
    return lines


def save_scene(scene: Scene, path, extra: dict | None = None) -> None:
    Path(path).write_text("\n".join(scene_records(scene, extra)) + "\n")


def load_scene(path) -> tuple[Scene, dict]:
    """Read a scene file; returns the scene and its full header record."""
    header = None
    points, obs_i, obs_uv, true_uv, outlier = {}, [], [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "scene":
                header = rec
            elif kind == "point":
                points[rec["i"]] = rec["xyz"]
            elif kind == "obs":
                obs_i.append(rec["i"])
                obs_uv.append(rec["uv"])
                true_uv.append(rec["true_uv"])
                outlier.append(rec["outlier"])
    if header is None or header.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"{path}: missing or unsupported scene header")
    n = header["num_points"]
    pts = np.array([points[i] for i in range(n)], dtype=np.float64).reshape(n, 3)
    arrays = (
        pts,
        np.array(header["gt_extrinsic"], dtype=np.float64),
        np.array(obs_i, dtype=np.int64),
        np.array(obs_uv, dtype=np.float64).reshape(-1, 2),
        np.array(true_uv, dtype=np.float64).reshape(-1, 2),
        np.array(outlier, dtype=bool),
    )
    _freeze(*arrays)
    scene = Scene(
        scene_id=header["scene_id"],
        points=arrays[0],
        gt_extrinsic=arrays[1],
        intrinsics=CameraIntrinsics(**header["intrinsics"]),
        obs_index=arrays[2],
        obs_pixels=arrays[3],
        true_pixels=arrays[4],
        is_outlier=arrays[5],
        pixel_noise_sigma=header["pixel_noise_sigma"],
        outlier_fraction=header["outlier_fraction"],
    )
    return scene, header


def write_depth_pgm(grid: np.ndarray, path, max_depth: float | None = None) -> None:
    """Plain (P2) PGM; nearer points are brighter, empty pixels are 0."""
    h, w = grid.shape
    occupied = ~np.isnan(grid)
    if max_depth is None:
        max_depth = float(np.nanmax(grid)) if occupied.any() else 1.0
    img = np.zeros((h, w), dtype=np.int64)
    scaled = 255.0 * (1.0 - np.clip(grid[occupied] / max_depth, 0.0, 1.0))
    img[occupied] = np.maximum(1, np.round(scaled)).astype(np.int64)
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in img:
            fh.write(" ".join(map(str, row)) + "\n")


def write_depth_text(grid: np.ndarray, path) -> None:
    """Whitespace-separated grid, ``-`` for empty pixels."""
    with open(path, "w") as fh:
        for row in grid:
            fh.write(" ".join("-" if math.isnan(d) else f"{d:.3f}" for d in row) + "\n")
