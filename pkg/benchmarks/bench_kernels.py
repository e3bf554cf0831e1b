"""Compare the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 10000] [--repeat 20]

Both paths are called directly, so the LSDCALIB_NUMBA flag does not matter
here.  Each row reports the best-of-repeat time and the largest difference
between the two outputs relative to the largest output magnitude.
"""

import argparse
import time

import numpy as np

from lsdcalib import kernels, lie
from lsdcalib.scene import NEAR_PLANE, SceneConfig, generate_scene


def best_time(fn, repeat):
    fn()  # warm-up (jit compile / cache load)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def exp_batch_nb(xis):
    out = np.empty((xis.shape[0], 4, 4))
    kernels._exp_se3_batch_nb(xis, out)
    return out


def log_batch_nb(Ts):
    out = np.empty((Ts.shape[0], 6))
    kernels._log_se3_batch_nb(Ts, out)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000, help="batch size / point count")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    xis = np.concatenate([rng.uniform(-1, 1, (args.n, 3)), rng.uniform(-1.7, 1.7, (args.n, 3))], axis=1)
    Ts = kernels.exp_se3_batch_numpy(xis)

    scene = generate_scene(SceneConfig(num_points=args.n), rng)
    T = lie.compose(lie.exp_map(np.array([0.02, -0.01, 0.03, 0.01, 0.02, -0.01])), scene.gt_extrinsic)
    K = scene.intrinsics
    pts = np.ascontiguousarray(scene.points[scene.obs_index])
    pix = np.ascontiguousarray(scene.obs_pixels)
    gn_args = (pts, pix, T[:3, :3].copy(), T[:3, 3].copy(), K.fx, K.fy, K.cx, K.cy, 2.0, NEAR_PLANE)

    cam = pts @ T[:3, :3].T + T[:3, 3]
    front = cam[:, 2] > NEAR_PLANE
    cam = cam[front]
    cols = np.floor(K.fx * cam[:, 0] / cam[:, 2] + K.cx).astype(np.int64)
    rows = np.floor(K.fy * cam[:, 1] / cam[:, 2] + K.cy).astype(np.int64)
    zb_args = (cols, rows, cam[:, 2].copy(), K.width, K.height)

    cases = [
        ("exp_se3_batch", lambda: exp_batch_nb(xis), lambda: kernels.exp_se3_batch_numpy(xis)),
        ("log_se3_batch", lambda: log_batch_nb(Ts), lambda: kernels.log_se3_batch_numpy(Ts)[0]),
        ("gn_normal_equations", lambda: kernels._gn_normal_equations_nb(*gn_args)[0],
         lambda: kernels.gn_normal_equations_numpy(*gn_args)[0]),
        ("zbuffer", lambda: kernels._zbuffer_nb(*zb_args), lambda: kernels.zbuffer_numpy(*zb_args)),
    ]  # fmt: skip

    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'rel diff':>12}")
    for name, nb, npy in cases:
        a, b = nb(), npy()
        scale = max(float(np.nanmax(np.abs(b))), 1.0) if np.isfinite(b).any() else 1.0
        diff = float(np.nanmax(np.abs(a - b))) / scale if np.isfinite(a).any() else 0.0
        if not np.array_equal(np.isnan(a), np.isnan(b)):
            diff = float("inf")
        t_nb, t_np = best_time(nb, args.repeat), best_time(npy, args.repeat)
        print(f"{name:<22}{1e3 * t_nb:>10.3f}{1e3 * t_np:>10.3f}{t_np / t_nb:>9.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
