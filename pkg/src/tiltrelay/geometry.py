"""Frames, quaternions and the thrust-direction attitude map.

Quaternions are numpy arrays ``[w, x, y, z]`` (scalar first) that rotate
body-frame vectors into the world frame. The world frame is ENU with gravity
pointing along -z.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateThrust

GRAVITY = 9.81
NORM_TOL = 1e-9
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(q1, q2):
    """Hamilton product ``q1 ⊗ q2``; broadcasts over leading axes."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=float), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=float), -1, 0)
    return np.stack([
        w1*w2 - x1*x2 - y1*y2 - z1*z2,
        w1*x2 + x1*w2 + y1*z2 - z1*y2,
        w1*y2 - x1*z2 + y1*w2 + z1*x2,
        w1*z2 + x1*y2 - y1*x2 + z1*w2,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle: float):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_to_rotmat(q):
    """Body-to-world rotation matrix; ``q`` may be (4,) or (..., 4)."""
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack([
        1 - 2*(y*y + z*z), 2*(x*y - w*z), 2*(x*z + w*y),
        2*(x*y + w*z), 1 - 2*(x*x + z*z), 2*(y*z - w*x),
        2*(x*z - w*y), 2*(y*z + w*x), 1 - 2*(x*x + y*y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(R):
    """Shepperd's method, vectorized over leading axes. Returns w >= 0."""
    R = np.asarray(R, dtype=float)
    shape = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    q = np.empty((R.shape[0], 4))
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.diagonal(R, axis1=1, axis2=2)
    choice = np.argmax(np.column_stack([tr, diag]), axis=1)
    for i in range(R.shape[0]):
        m = R[i]
        c = choice[i]
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[i])
            q[i] = [0.25*s, (m[2, 1] - m[1, 2])/s, (m[0, 2] - m[2, 0])/s, (m[1, 0] - m[0, 1])/s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q[i] = [(m[2, 1] - m[1, 2])/s, 0.25*s, (m[0, 1] + m[1, 0])/s, (m[0, 2] + m[2, 0])/s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
            q[i] = [(m[0, 2] - m[2, 0])/s, (m[0, 1] + m[1, 0])/s, 0.25*s, (m[1, 2] + m[2, 1])/s]
        else:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
            q[i] = [(m[1, 0] - m[0, 1])/s, (m[0, 2] + m[2, 0])/s, (m[1, 2] + m[2, 1])/s, 0.25*s]
    q[q[:, 0] < 0] *= -1.0
    q = quat_normalize(q)
    return q.reshape(shape + (4,))


def rotate_to_world(q, v_body):
    return np.einsum("...ij,...j->...i", quat_to_rotmat(q), np.asarray(v_body, dtype=float))


def rotate_to_body(q, v_world):
    return np.einsum("...ji,...j->...i", quat_to_rotmat(q), np.asarray(v_world, dtype=float))


def yaw_of(q) -> float:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.arctan2(2.0 * (w*z + x*y), 1.0 - 2.0 * (y*y + z*z))


def attitude_matrices(accel_world, gravity: float = GRAVITY, yaw=0.0):
    """Rotation matrices whose body z-axis is aligned with the thrust.

    The required specific thrust is ``accel + g*z``; the body x-axis is chosen
    so that its horizontal heading equals ``yaw``. Works on (3,) or (N, 3).
    """
    a = np.atleast_2d(np.asarray(accel_world, dtype=float))
    thrust = a + np.array([0.0, 0.0, gravity])
    norm = np.linalg.norm(thrust, axis=1)
    if np.any(norm <= 1e-6):
        raise DegenerateThrust("commanded acceleration cancels gravity (zero thrust)")
    zb = thrust / norm[:, None]
    yaw = np.broadcast_to(np.asarray(yaw, dtype=float), norm.shape)
    # body x lies in the vertical plane of the heading, so the ZYX yaw is exact
    yc = np.column_stack([-np.sin(yaw), np.cos(yaw), np.zeros_like(yaw)])
    xb = np.cross(yc, zb)
    xn = np.linalg.norm(xb, axis=1)
    bad = xn < 1e-9
    if np.any(bad):
        # thrust along the lateral axis: keep body y in the heading plane instead
        xc = np.column_stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)])
        yb_alt = np.cross(zb[bad], xc[bad])
        yb_alt /= np.linalg.norm(yb_alt, axis=1)[:, None]
        xb[bad] = np.cross(yb_alt, zb[bad])
        xn[bad] = 1.0
    xb = xb / xn[:, None]
    yb = np.cross(zb, xb)
    R = np.stack([xb, yb, zb], axis=2)
    return R if np.ndim(accel_world) > 1 else R[0]


def attitude_from_acceleration(accel_world, gravity: float = GRAVITY, yaw: float = 0.0):
    """Unit quaternion of a multirotor producing ``accel_world`` at heading ``yaw``.

    Raises DegenerateThrust when ``accel_world + g*z`` vanishes (free fall).
    """
    return rotmat_to_quat(attitude_matrices(accel_world, gravity, yaw))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation).reshape(4))
