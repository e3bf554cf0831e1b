import itertools

import numpy as np
import pytest

from lsdcalib import kernels, lie
from lsdcalib.scene import (
    NEAR_PLANE,
    CameraIntrinsics,
    PerturbationSpec,
    SceneConfig,
    generate_scene,
    initial_extrinsic,
    load_scene,
    project_point,
    project_points,
    render_projection_map,
    sample_perturbation,
    save_scene,
    write_depth_pgm,
    write_depth_text,
)

K = CameraIntrinsics()


def homogeneous_projection(p, T, K):
    """Dense 3x4 camera matrix oracle."""
    P = K.matrix() @ T[:3, :]
    h = P @ np.append(p, 1.0)
    return h[:2] / h[2]


def with_points(scene, points):
    from dataclasses import replace

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return replace(scene, points=pts)


class TestIntrinsics:
    def test_matrix(self):
        np.testing.assert_array_equal(K.matrix(), [[718, 0, 607], [0, 718, 185], [0, 0, 1]])

    @pytest.mark.parametrize("kw", [{"fx": 0}, {"fy": -1}, {"cx": 0}, {"cx": 1241}, {"cy": 400}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CameraIntrinsics(**kw)


class TestProjection:
    def test_optical_axis(self):
        np.testing.assert_allclose(project_point([0, 0, 5.0], np.eye(4), K), [K.cx, K.cy])

    def test_behind_camera(self):
        assert project_point([0, 0, -5.0], np.eye(4), K) is None
        assert project_point([0, 0, NEAR_PLANE], np.eye(4), K) is None

    def test_off_image(self):
        assert project_point([100.0, 0, 1.0], np.eye(4), K) is None

    def test_matches_camera_matrix(self, rng):
        for _ in range(200):
            T = lie.exp_map(np.concatenate([rng.normal(size=3), rng.normal(size=3) * 0.3]))
            p = rng.normal(size=3) * 5
            q = project_point(p, T, K)
            h = homogeneous_projection(p, T, K)
            z = (T[:3, :3] @ p + T[:3, 3])[2]
            if q is None:
                assert z <= NEAR_PLANE or not (0 <= h[0] < K.width and 0 <= h[1] < K.height)
            else:
                np.testing.assert_allclose(q, h, rtol=1e-12)

    def test_vectorised_agrees(self, rng):
        pts = rng.normal(size=(100, 3)) * 3 + [0, 0, 2]
        T = np.eye(4)
        out = project_points(pts, T, K)
        for p, o in zip(pts, out):
            if p[2] <= NEAR_PLANE:
                assert np.all(np.isnan(o))
            else:
                np.testing.assert_allclose(o, homogeneous_projection(p, T, K), rtol=1e-12)


class TestGenerateScene:
    def test_counts_and_visibility(self):
        cfg = SceneConfig(num_points=500, pixel_noise_sigma=0.0, outlier_fraction=0.0)
        scene = generate_scene(cfg, np.random.default_rng(1))
        assert scene.num_points == 500 and len(scene.observations()) == 500
        for p in scene.points:
            assert project_point(p, scene.gt_extrinsic, K) is not None

    def test_noise_free_residual_is_zero(self):
        cfg = SceneConfig(num_points=300, pixel_noise_sigma=0.0, outlier_fraction=0.0)
        scene = generate_scene(cfg, np.random.default_rng(2))
        res = project_points(scene.points[scene.obs_index], scene.gt_extrinsic, K) - scene.obs_pixels
        np.testing.assert_allclose(res, 0.0, atol=1e-9)

    def test_noise_within_six_sigma(self):
        cfg = SceneConfig(num_points=2000, pixel_noise_sigma=1.5, outlier_fraction=0.0)
        scene = generate_scene(cfg, np.random.default_rng(3))
        err = np.abs(scene.obs_pixels - scene.true_pixels)
        assert err.max() < 6 * 1.5
        assert np.std(scene.obs_pixels - scene.true_pixels) == pytest.approx(1.5, rel=0.05)

    def test_outliers(self):
        cfg = SceneConfig(num_points=400, outlier_fraction=0.25)
        scene = generate_scene(cfg, np.random.default_rng(4))
        assert scene.is_outlier.sum() == 100
        px = scene.obs_pixels[scene.is_outlier]
        assert np.all((px[:, 0] >= 0) & (px[:, 0] < K.width) & (px[:, 1] >= 0) & (px[:, 1] < K.height))

    def test_depth_bounds(self):
        cfg = SceneConfig(num_points=1000, depth_min=5.0, depth_max=20.0)
        scene = generate_scene(cfg, np.random.default_rng(5))
        z = (scene.points @ scene.gt_extrinsic[:3, :3].T + scene.gt_extrinsic[:3, 3])[:, 2]
        assert z.min() >= 5.0 and z.max() <= 20.0
        # volume-uniform: median depth is the cube-root midpoint
        assert np.median(z) == pytest.approx(np.cbrt((5.0**3 + 20.0**3) / 2), rel=0.03)

    def test_ground_truth_is_rigid(self, small_scene):
        assert lie.is_valid_transform(small_scene.gt_extrinsic)

    def test_reproducible(self):
        a = generate_scene(SceneConfig(), np.random.default_rng(9))
        b = generate_scene(SceneConfig(), np.random.default_rng(9))
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.obs_pixels, b.obs_pixels)
        np.testing.assert_array_equal(a.gt_extrinsic, b.gt_extrinsic)

    @pytest.mark.parametrize(
        "kw",
        [{"depth_min": 10.0, "depth_max": 5.0}, {"depth_min": 0.05}, {"num_points": 0},
         {"outlier_fraction": 0.5}, {"pixel_noise_sigma": -1.0}],
    )  # fmt: skip
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            generate_scene(SceneConfig(**kw), np.random.default_rng(0))

    def test_arrays_frozen(self, small_scene):
        with pytest.raises(ValueError):
            small_scene.points[0, 0] = 1.0

    def test_config_dict_roundtrip(self):
        cfg = SceneConfig(num_points=42, intrinsics=CameraIntrinsics(fx=500.0))
        assert SceneConfig.from_dict(cfg.to_dict()) == cfg


class TestPerturbation:
    def test_zero_spec(self, rng):
        np.testing.assert_array_equal(sample_perturbation(PerturbationSpec(0, 0), rng), np.zeros(6))

    def test_bounds(self):
        rng = np.random.default_rng(11)
        spec = PerturbationSpec(15.0, 0.15)
        for _ in range(10_000):
            T = lie.exp_map(sample_perturbation(spec, rng))
            assert np.all(np.abs(lie.euler_from_rotation(T)) <= 15.0 + 1e-9)
            assert np.all(np.abs(T[:3, 3]) <= 0.15 + 1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(12)
        n = 10_000
        xs = np.array([sample_perturbation(PerturbationSpec(), rng) for _ in range(n)])
        sem = xs.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(xs.mean(axis=0)) < 3 * sem)

    def test_reproducible(self):
        a = sample_perturbation(PerturbationSpec(), np.random.default_rng(5))
        b = sample_perturbation(PerturbationSpec(), np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_initial_extrinsic_is_left_perturbation(self, small_scene, rng):
        xi = sample_perturbation(PerturbationSpec(), rng)
        T0 = initial_extrinsic(small_scene, xi)
        np.testing.assert_allclose(lie.log_map(T0 @ lie.inverse(small_scene.gt_extrinsic)), xi, atol=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            PerturbationSpec(-1.0, 0.1)


class TestProjectionMap:
    def test_empty(self, small_scene):
        grid = render_projection_map(with_points(small_scene, np.empty((0, 3))), np.eye(4))
        assert grid.shape == (K.height, K.width) and np.all(np.isnan(grid))

    def test_one_point(self, small_scene):
        grid = render_projection_map(with_points(small_scene, [[0.0, 0.0, 5.0]]), np.eye(4))
        assert np.count_nonzero(~np.isnan(grid)) == 1
        assert grid[int(K.cy), int(K.cx)] == 5.0

    @pytest.mark.parametrize("order", list(itertools.permutations(range(2))))
    def test_nearest_wins_both_orderings(self, small_scene, order):
        pts = np.array([[0.0, 0.0, 8.0], [0.0, 0.0, 4.0]])[list(order)]
        grid = render_projection_map(with_points(small_scene, pts), np.eye(4))
        assert grid[int(K.cy), int(K.cx)] == 4.0
        assert np.count_nonzero(~np.isnan(grid)) == 1

    def test_behind_points_ignored(self, small_scene):
        grid = render_projection_map(with_points(small_scene, [[0.0, 0.0, -5.0], [0, 0, 0.05]]), np.eye(4))
        assert np.all(np.isnan(grid))

    def test_matches_brute_force(self, small_scene, backend):
        grid = render_projection_map(small_scene, small_scene.gt_extrinsic)
        expected = np.full_like(grid, np.nan)
        for p in small_scene.points:
            q = small_scene.gt_extrinsic[:3, :3] @ p + small_scene.gt_extrinsic[:3, 3]
            uv = project_point(p, small_scene.gt_extrinsic, K)
            if uv is None:
                continue
            c, r = int(np.floor(uv[0])), int(np.floor(uv[1]))
            if np.isnan(expected[r, c]) or q[2] < expected[r, c]:
                expected[r, c] = q[2]
        np.testing.assert_array_equal(np.isnan(grid), np.isnan(expected))
        np.testing.assert_allclose(grid, expected, rtol=1e-14)
        assert kernels.backend() == backend


class TestSerialization:
    def test_roundtrip(self, small_scene, tmp_path):
        path = tmp_path / "s.jsonl"
        save_scene(small_scene, path, extra={"note": [1, 2]})
        scene, header = load_scene(path)
        assert header["note"] == [1, 2] and scene.scene_id == small_scene.scene_id
        for name in ("points", "gt_extrinsic", "obs_index", "obs_pixels", "true_pixels", "is_outlier"):
            np.testing.assert_array_equal(getattr(scene, name), getattr(small_scene, name))
        assert scene.intrinsics == small_scene.intrinsics

    def test_line_structure(self, small_scene, tmp_path):
        path = tmp_path / "s.jsonl"
        save_scene(small_scene, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 2 * small_scene.num_points
        assert '"type":"scene"' in lines[0]

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type": "point", "i": 0, "xyz": [0, 0, 1]}\n')
        with pytest.raises(ValueError):
            load_scene(path)

    def test_pgm_and_text(self, tmp_path):
        grid = np.full((2, 3), np.nan)
        grid[0, 1] = 10.0
        grid[1, 2] = 0.0
        write_depth_pgm(grid, tmp_path / "m.pgm", max_depth=20.0)
        assert (tmp_path / "m.pgm").read_text().split() == ["P2", "3", "2", "255", "0", "128", "0", "0", "0", "255"]
        write_depth_text(grid, tmp_path / "m.txt")
        assert (tmp_path / "m.txt").read_text() == "- 10.000 -\n- - 0.000\n"
