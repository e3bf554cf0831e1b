"""SE(3) / se(3) arithmetic on plain numpy arrays.

Conventions used throughout the package:

* a *twist* is a float array of shape (6,) laid out as ``(rho, phi)``:
  translational part first (meters), axis-angle rotation second (radians);
* a *rigid transform* is a 4x4 homogeneous matrix;
* Euler angles are fixed-axis XYZ (roll about x, then pitch about y, then yaw
  about z, all about the fixed frame), i.e. ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``,
  returned in degrees.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import SingularityError

ORTHO_TOL = 1e-9
GIMBAL_TOL_DEG = 1e-7


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]], dtype=np.float64
    )


def twist_matrix(xi: np.ndarray) -> np.ndarray:
    """4x4 Lie-algebra matrix of a twist."""
    xi = np.asarray(xi, dtype=np.float64)
    out = np.zeros((4, 4))
    out[:3, :3] = hat(xi[3:])
    out[:3, 3] = xi[:3]
    return out


def make_transform(rotation=None, translation=None) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    if translation is not None:
        T[:3, 3] = translation
    return T


def is_valid_transform(T: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    T = np.asarray(T)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    R = T[:3, :3]
    if np.linalg.norm(R @ R.T - np.eye(3)) > tol:
        return False
    if abs(np.linalg.det(R) - 1.0) > tol:
        return False
    return np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0])


def exp_map(xi: np.ndarray) -> np.ndarray:
    """Exponential map se(3) -> SE(3).

    Closed-form Rodrigues rotation and left-Jacobian translation, switching to
    two-term Taylor series for ``|phi| < 1e-8``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (6,):
        raise ValueError(f"twist must have shape (6,), got {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist has non-finite components")
    return kernels.exp_se3(xi)


def log_map(T: np.ndarray) -> np.ndarray:
    """Logarithm SE(3) -> se(3); the inverse of :func:`exp_map`.

    Raises :class:`SingularityError` when the rotation angle is within 1e-6 of
    pi, where the axis is not unique.
    """
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValueError(f"transform must have shape (4, 4), got {T.shape}")
    xi, ok = kernels.log_se3(T)
    if not ok:
        raise SingularityError("rotation angle too close to pi for a unique logarithm")
    return xi


def exp_map_batch(xis: np.ndarray) -> np.ndarray:
    xis = np.asarray(xis, dtype=np.float64)
    if xis.ndim != 2 or xis.shape[1] != 6:
        raise ValueError(f"twists must have shape (N, 6), got {xis.shape}")
    if not np.all(np.isfinite(xis)):
        raise ValueError("twists have non-finite components")
    return kernels.exp_se3_batch(xis)


def log_map_batch(Ts: np.ndarray) -> np.ndarray:
    Ts = np.asarray(Ts, dtype=np.float64)
    if Ts.ndim != 3 or Ts.shape[1:] != (4, 4):
        raise ValueError(f"transforms must have shape (N, 4, 4), got {Ts.shape}")
    xis, ok = kernels.log_se3_batch(Ts)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise SingularityError(f"transform {bad}: rotation angle too close to pi")
    return xis


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1.0
        Q = U @ Vt
    return Q


def compose(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product ``A @ B``, re-orthonormalising the rotation on drift."""
    C = np.asarray(A, dtype=np.float64) @ np.asarray(B, dtype=np.float64)
    R = C[:3, :3]
    if np.linalg.norm(R @ R.T - np.eye(3)) > ORTHO_TOL:
        C[:3, :3] = orthonormalize(R)
    C[3] = (0.0, 0.0, 0.0, 1.0)
    return C


def inverse(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def rotation_angle(T: np.ndarray) -> float:
    R = np.asarray(T)[:3, :3]
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return math.atan2(0.5 * np.linalg.norm(v), 0.5 * (np.trace(R) - 1.0))


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """Fixed-axis XYZ rotation from angles in degrees."""
    ax, ay, az = np.radians([rx, ry, rz])
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return Rz @ Ry @ Rx


def _wrap_deg(a: float) -> float:
    # range (-180, 180]
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def euler_from_rotation(T: np.ndarray) -> np.ndarray:
    """Fixed-axis XYZ Euler angles ``(rx, ry, rz)`` in degrees.

    Accepts a 4x4 transform or a bare 3x3 rotation.  At gimbal lock
    (``|ry| = 90`` deg) the roll is set to zero and folded into the yaw.
    """
    T = np.asarray(T, dtype=np.float64)
    R = T[:3, :3]
    cy = math.hypot(R[0, 0], R[1, 0])
    ry = math.degrees(math.atan2(-R[2, 0], cy))
    if abs(abs(ry) - 90.0) < GIMBAL_TOL_DEG:
        rx = 0.0
        rz = math.degrees(math.atan2(-R[0, 1], R[1, 1]))
    else:
        rx = math.degrees(math.atan2(R[2, 1], R[2, 2]))
        rz = math.degrees(math.atan2(R[1, 0], R[0, 0]))
    return np.array([_wrap_deg(rx), _wrap_deg(ry), _wrap_deg(rz)])
