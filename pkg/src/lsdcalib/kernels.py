"""Numeric inner loops, each with a numba-compiled and a pure-numpy path.

The compiled path is used when numba is importable and the environment
variable ``LSDCALIB_NUMBA`` is not set to ``0``.  Both paths are always
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.

Kernels that are scalar by nature (``exp_se3``, ``log_se3``) are written once
in a numba-compatible subset of Python; the fallback simply runs the same
function uncompiled.  Array kernels have a separate vectorised numpy version.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LSDCALIB_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)

# |phi| below which Rodrigues / left-Jacobian coefficients use Taylor series
SMALL_ANGLE = 1e-8
# the V^-1 coefficient suffers cancellation far earlier than the others
VINV_SERIES_ANGLE = 1e-4
# log is refused at angles >= pi - SINGULAR_MARGIN
SINGULAR_MARGIN = 1e-6


def _jit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return None


# ---------------------------------------------------------------------------
# SE(3) exponential / logarithm, single element
# ---------------------------------------------------------------------------


def _exp_se3_py(xi, out):
    r0, r1, r2 = xi[0], xi[1], xi[2]
    w0, w1, w2 = xi[3], xi[4], xi[5]
    th2 = w0 * w0 + w1 * w1 + w2 * w2
    th = math.sqrt(th2)
    if th < SMALL_ANGLE:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
        c = 1.0 / 6.0 - th2 / 120.0
    else:
        s = math.sin(th)
        h = math.sin(0.5 * th)
        a = s / th
        b = 2.0 * h * h / th2
        c = (th - s) / (th2 * th)

    # K = hat(w), K2 = K @ K = w w^T - th2 I
    k01, k02, k12 = -w2, w1, -w0
    k10, k20, k21 = w2, -w1, w0
    q00 = w0 * w0 - th2
    q11 = w1 * w1 - th2
    q22 = w2 * w2 - th2
    q01 = w0 * w1
    q02 = w0 * w2
    q12 = w1 * w2

    out[0, 0] = 1.0 + b * q00
    out[0, 1] = a * k01 + b * q01
    out[0, 2] = a * k02 + b * q02
    out[1, 0] = a * k10 + b * q01
    out[1, 1] = 1.0 + b * q11
    out[1, 2] = a * k12 + b * q12
    out[2, 0] = a * k20 + b * q02
    out[2, 1] = a * k21 + b * q12
    out[2, 2] = 1.0 + b * q22

    v00 = 1.0 + c * q00
    v01 = b * k01 + c * q01
    v02 = b * k02 + c * q02
    v10 = b * k10 + c * q01
    v11 = 1.0 + c * q11
    v12 = b * k12 + c * q12
    v20 = b * k20 + c * q02
    v21 = b * k21 + c * q12
    v22 = 1.0 + c * q22
    out[0, 3] = v00 * r0 + v01 * r1 + v02 * r2
    out[1, 3] = v10 * r0 + v11 * r1 + v12 * r2
    out[2, 3] = v20 * r0 + v21 * r1 + v22 * r2
    out[3, 0] = 0.0
    out[3, 1] = 0.0
    out[3, 2] = 0.0
    out[3, 3] = 1.0


def _log_se3_py(T, out):
    """Write log(T) into ``out``; return False if the angle is at the pi singularity."""
    vx = T[2, 1] - T[1, 2]
    vy = T[0, 2] - T[2, 0]
    vz = T[1, 0] - T[0, 1]
    sin_th = 0.5 * math.sqrt(vx * vx + vy * vy + vz * vz)
    cos_th = 0.5 * (T[0, 0] + T[1, 1] + T[2, 2] - 1.0)
    th = math.atan2(sin_th, cos_th)
    if th >= math.pi - SINGULAR_MARGIN:
        return False
    th2 = th * th
    if th < SMALL_ANGLE:
        k = 0.5 + th2 / 12.0
    else:
        k = 0.5 * th / math.sin(th)
    w0 = k * vx
    w1 = k * vy
    w2 = k * vz

    if th < VINV_SERIES_ANGLE:
        d = 1.0 / 12.0 + th2 / 720.0
    else:
        half = 0.5 * th
        d = (1.0 - half * math.cos(half) / math.sin(half)) / th2

    # V^-1 = I - K/2 + d K^2
    q00 = w0 * w0 - th2
    q11 = w1 * w1 - th2
    q22 = w2 * w2 - th2
    q01 = w0 * w1
    q02 = w0 * w2
    q12 = w1 * w2
    t0, t1, t2 = T[0, 3], T[1, 3], T[2, 3]
    out[0] = (1.0 + d * q00) * t0 + (0.5 * w2 + d * q01) * t1 + (-0.5 * w1 + d * q02) * t2
    out[1] = (-0.5 * w2 + d * q01) * t0 + (1.0 + d * q11) * t1 + (0.5 * w0 + d * q12) * t2
    out[2] = (0.5 * w1 + d * q02) * t0 + (-0.5 * w0 + d * q12) * t1 + (1.0 + d * q22) * t2
    out[3] = w0
    out[4] = w1
    out[5] = w2
    return True


_exp_se3_nb = _jit(_exp_se3_py)
_log_se3_nb = _jit(_log_se3_py)
_exp_se3_kernel = _exp_se3_nb if USE_NUMBA else _exp_se3_py
_log_se3_kernel = _log_se3_nb if USE_NUMBA else _log_se3_py

# the batch loops close over the module-level element kernels, so they must be
# compiled after those names are bound
if HAVE_NUMBA:
    _exp_se3_kernel_jit = _exp_se3_nb
    _log_se3_kernel_jit = _log_se3_nb

    @numba.njit(cache=True)
    def _exp_se3_batch_nb(xis, out):
        for i in range(xis.shape[0]):
            _exp_se3_kernel_jit(xis[i], out[i])

    @numba.njit(cache=True)
    def _log_se3_batch_nb(Ts, out):
        ok = np.ones(Ts.shape[0], dtype=np.bool_)
        for i in range(Ts.shape[0]):
            ok[i] = _log_se3_kernel_jit(Ts[i], out[i])
        return ok

else:  # pragma: no cover
    _exp_se3_batch_nb = None
    _log_se3_batch_nb = None


def exp_se3(xi: np.ndarray) -> np.ndarray:
    out = np.empty((4, 4))
    _exp_se3_kernel(np.ascontiguousarray(xi, dtype=np.float64), out)
    return out


def log_se3(T: np.ndarray) -> tuple[np.ndarray, bool]:
    out = np.empty(6)
    ok = _log_se3_kernel(np.ascontiguousarray(T, dtype=np.float64), out)
    return out, bool(ok)


# vectorised numpy versions of the batch maps


def _hat_batch(w):
    K = np.zeros(w.shape[:-1] + (3, 3))
    K[..., 0, 1] = -w[..., 2]
    K[..., 0, 2] = w[..., 1]
    K[..., 1, 0] = w[..., 2]
    K[..., 1, 2] = -w[..., 0]
    K[..., 2, 0] = -w[..., 1]
    K[..., 2, 1] = w[..., 0]
    return K


def exp_se3_batch_numpy(xis: np.ndarray) -> np.ndarray:
    xis = np.asarray(xis, dtype=np.float64)
    rho, w = xis[:, :3], xis[:, 3:]
    th2 = np.einsum("ij,ij->i", w, w)
    th = np.sqrt(th2)
    small = th < SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0, 2.0 * np.sin(0.5 * safe) ** 2 / safe**2)
    c = np.where(small, 1.0 / 6.0 - th2 / 120.0, (safe - np.sin(safe)) / safe**3)
    K = _hat_batch(w)
    K2 = K @ K
    eye = np.eye(3)
    R = eye + a[:, None, None] * K + b[:, None, None] * K2
    V = eye + b[:, None, None] * K + c[:, None, None] * K2
    out = np.zeros((xis.shape[0], 4, 4))
    out[:, :3, :3] = R
    out[:, :3, 3] = np.einsum("nij,nj->ni", V, rho)
    out[:, 3, 3] = 1.0
    return out


def log_se3_batch_numpy(Ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Ts = np.asarray(Ts, dtype=np.float64)
    R = Ts[:, :3, :3]
    v = np.stack(
        [R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1
    )
    sin_th = 0.5 * np.linalg.norm(v, axis=1)
    cos_th = 0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0)
    th = np.arctan2(sin_th, cos_th)
    ok = th < math.pi - SINGULAR_MARGIN
    th2 = th * th
    small = th < SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    k = np.where(small, 0.5 + th2 / 12.0, 0.5 * safe / np.sin(safe))
    w = k[:, None] * v
    series = th < VINV_SERIES_ANGLE
    half = 0.5 * np.where(series, 1.0, th)
    d = np.where(
        series,
        1.0 / 12.0 + th2 / 720.0,
        (1.0 - half / np.tan(half)) / np.where(series, 1.0, th2),
    )
    K = _hat_batch(w)
    Vinv = np.eye(3) - 0.5 * K + d[:, None, None] * (K @ K)
    out = np.empty((Ts.shape[0], 6))
    out[:, :3] = np.einsum("nij,nj->ni", Vinv, Ts[:, :3, 3])
    out[:, 3:] = w
    return out, ok


def exp_se3_batch(xis: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        xis = np.ascontiguousarray(xis, dtype=np.float64)
        out = np.empty((xis.shape[0], 4, 4))
        _exp_se3_batch_nb(xis, out)
        return out
    return exp_se3_batch_numpy(xis)


def log_se3_batch(Ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if USE_NUMBA:
        Ts = np.ascontiguousarray(Ts, dtype=np.float64)
        out = np.empty((Ts.shape[0], 6))
        ok = _log_se3_batch_nb(Ts, out)
        return out, ok
    return log_se3_batch_numpy(Ts)


# ---------------------------------------------------------------------------
# Huber-weighted Gauss-Newton normal equations for pinhole reprojection
# ---------------------------------------------------------------------------


def _gn_normal_equations_py(points, pixels, R, t, fx, fy, cx, cy, huber_delta, near):
    H = np.zeros((6, 6))
    g = np.zeros(6)
    cost = 0.0
    n_used = 0
    J = np.empty((2, 6))
    for i in range(points.shape[0]):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        if qz <= near:
            continue
        iz = 1.0 / qz
        ru = fx * qx * iz + cx - pixels[i, 0]
        rv = fy * qy * iz + cy - pixels[i, 1]
        e = math.sqrt(ru * ru + rv * rv)
        if e <= huber_delta:
            w = 1.0
            cost += 0.5 * e * e
        else:
            w = huber_delta / e
            cost += huber_delta * (e - 0.5 * huber_delta)
        # d(pixel)/dq
        a00 = fx * iz
        a02 = -fx * qx * iz * iz
        a11 = fy * iz
        a12 = -fy * qy * iz * iz
        # dq/dxi = [I | -hat(q)]
        J[0, 0] = a00
        J[0, 1] = 0.0
        J[0, 2] = a02
        J[0, 3] = a02 * qy
        J[0, 4] = a00 * qz - a02 * qx
        J[0, 5] = -a00 * qy
        J[1, 0] = 0.0
        J[1, 1] = a11
        J[1, 2] = a12
        J[1, 3] = -a11 * qz + a12 * qy
        J[1, 4] = -a12 * qx
        J[1, 5] = a11 * qx
        for a in range(6):
            g[a] += w * (J[0, a] * ru + J[1, a] * rv)
            for b in range(a, 6):
                H[a, b] += w * (J[0, a] * J[0, b] + J[1, a] * J[1, b])
        n_used += 1
    for a in range(6):
        for b in range(a):
            H[a, b] = H[b, a]
    return H, g, cost, n_used


_gn_normal_equations_nb = _jit(_gn_normal_equations_py)


def gn_normal_equations_numpy(points, pixels, R, t, fx, fy, cx, cy, huber_delta, near):
    q = points @ R.T + t
    keep = q[:, 2] > near
    q = q[keep]
    pix = pixels[keep]
    qx, qy, qz = q[:, 0], q[:, 1], q[:, 2]
    iz = 1.0 / qz
    r = np.stack([fx * qx * iz + cx - pix[:, 0], fy * qy * iz + cy - pix[:, 1]], axis=1)
    e = np.sqrt(np.einsum("ij,ij->i", r, r))
    inlier = e <= huber_delta
    w = np.where(inlier, 1.0, huber_delta / np.where(inlier, 1.0, e))
    cost = float(
        np.sum(np.where(inlier, 0.5 * e * e, huber_delta * (e - 0.5 * huber_delta)))
    )
    a00 = fx * iz
    a02 = -fx * qx * iz * iz
    a11 = fy * iz
    a12 = -fy * qy * iz * iz
    n = q.shape[0]
    J = np.zeros((n, 2, 6))
    J[:, 0, 0] = a00
    J[:, 0, 2] = a02
    J[:, 0, 3] = a02 * qy
    J[:, 0, 4] = a00 * qz - a02 * qx
    J[:, 0, 5] = -a00 * qy
    J[:, 1, 1] = a11
    J[:, 1, 2] = a12
    J[:, 1, 3] = -a11 * qz + a12 * qy
    J[:, 1, 4] = -a12 * qx
    J[:, 1, 5] = a11 * qx
    H = np.einsum("n,nka,nkb->ab", w, J, J)
    H = np.triu(H) + np.triu(H, 1).T
    g = np.einsum("n,nka,nk->a", w, J, r)
    return H, g, cost, int(n)


def gn_normal_equations(points, pixels, R, t, fx, fy, cx, cy, huber_delta, near):
    """Accumulate ``H = sum w J^T J`` and ``g = sum w J^T r`` over all correspondences.

    ``J`` is the pixel Jacobian with respect to a left-multiplied twist
    ``(rho, phi)``; ``w`` are Huber IRLS weights on the residual norm.  Points
    with camera depth ``<= near`` are skipped.  Returns ``(H, g, cost, n_used)``.
    """
    args = (
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(pixels, dtype=np.float64),
        np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(t, dtype=np.float64),
        float(fx),
        float(fy),
        float(cx),
        float(cy),
        float(huber_delta),
        float(near),
    )
    if USE_NUMBA:
        H, g, cost, n = _gn_normal_equations_nb(*args)
        return H, g, float(cost), int(n)
    return gn_normal_equations_numpy(*args)


# ---------------------------------------------------------------------------
# Nearest-depth z-buffer
# ---------------------------------------------------------------------------


def _zbuffer_py(cols, rows, depth, width, height):
    grid = np.full((height, width), np.nan)
    for i in range(cols.shape[0]):
        c = cols[i]
        r = rows[i]
        if c < 0 or c >= width or r < 0 or r >= height:
            continue
        cur = grid[r, c]
        if math.isnan(cur) or depth[i] < cur:
            grid[r, c] = depth[i]
    return grid


_zbuffer_nb = _jit(_zbuffer_py)


def zbuffer_numpy(cols, rows, depth, width, height):
    grid = np.full((height, width), np.nan)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    cols, rows, depth = cols[inside], rows[inside], depth[inside]
    if depth.size == 0:
        return grid
    flat = rows * width + cols
    order = np.lexsort((depth, flat))
    flat, depth = flat[order], depth[order]
    first = np.ones(flat.size, dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    grid.reshape(-1)[flat[first]] = depth[first]
    return grid


def zbuffer(cols, rows, depth, width, height):
    """Depth grid of shape (height, width); nearest depth wins, empty cells are NaN."""
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    if USE_NUMBA:
        return _zbuffer_nb(cols, rows, depth, int(width), int(height))
    return zbuffer_numpy(cols, rows, depth, int(width), int(height))


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
