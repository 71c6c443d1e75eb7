"""Generically tilted multirotor dynamics with propeller-speed-rate inputs.

Extended state layout (length ``13 + n``)::

    [p (3), q (4, scalar first), v (3), omega (3, body), Omega (n)]

The input is the propeller acceleration ``dOmega/dt``. Every function here
accepts a single state ``(nx,)`` or a batch ``(B, nx)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import AntennaPattern
from .errors import UnknownSelector
from .geometry import GRAVITY, quat_to_rotmat, yaw_of

P, Q, V, W = slice(0, 3), slice(3, 7), slice(7, 10), slice(10, 13)
OMEGA0 = 13


@dataclass(frozen=True, eq=False)
class GtmrParams:
    mass: float
    inertia: np.ndarray
    rotor_positions: np.ndarray
    rotor_axes: np.ndarray
    spin: np.ndarray
    c_f: float = 8.5e-6
    c_tau: float = 1.4e-7
    gravity: float = GRAVITY
    force_alloc: np.ndarray = field(init=False, repr=False)
    torque_alloc: np.ndarray = field(init=False, repr=False)
    inertia_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        I = np.asarray(self.inertia, dtype=float)
        r = np.asarray(self.rotor_positions, dtype=float)
        z = np.asarray(self.rotor_axes, dtype=float)
        z = z / np.linalg.norm(z, axis=1, keepdims=True)
        s = np.asarray(self.spin, dtype=float)
        n = r.shape[0]
        if n < 4 or z.shape != (n, 3) or s.shape != (n,):
            raise ValueError("need n >= 4 rotors with matching positions, axes and spins")
        if not np.allclose(I, I.T) or np.any(np.linalg.eigvalsh(I) <= 0):
            raise ValueError("inertia must be symmetric positive definite")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        F = self.c_f * z.T
        # rotor thrust moment plus reaction drag torque opposite to spin
        Tq = self.c_f * np.cross(r, z).T - self.c_tau * (s[:, None] * z).T
        if np.linalg.matrix_rank(np.vstack([F, Tq])) < 4:
            raise ValueError("allocation matrix has rank < 4")
        for name, val in (("inertia", I), ("rotor_positions", r), ("rotor_axes", z), ("spin", s),
                          ("force_alloc", F), ("torque_alloc", Tq), ("inertia_inv", np.linalg.inv(I))):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.rotor_positions.shape[0]

    @property
    def nx(self) -> int:
        return OMEGA0 + self.n

    def with_mass_scale(self, factor: float) -> "GtmrParams":
        """Copy with mass (and inertia) scaled, for plant/model mismatch runs."""
        return replace(self, mass=self.mass * factor, inertia=self.inertia * factor)

    def hover_speeds(self) -> np.ndarray:
        """Rotor speeds that hold a level hover with zero net torque."""
        A = np.vstack([self.force_alloc, self.torque_alloc])
        wrench = np.array([0.0, 0.0, self.mass * self.gravity, 0.0, 0.0, 0.0])
        sq = np.linalg.lstsq(A, wrench, rcond=None)[0]
        if np.any(sq < 0):
            raise ValueError("this geometry cannot hover level with positive rotor speeds")
        return np.sqrt(sq)


def quadrotor(mass=1.0, arm=0.25, c_f=8.5e-6, c_tau=1.4e-7, gravity=GRAVITY) -> GtmrParams:
    """Coplanar X-configuration quadrotor."""
    ang = np.deg2rad([45.0, 135.0, 225.0, 315.0])
    pos = arm * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(4)])
    axes = np.tile([0.0, 0.0, 1.0], (4, 1))
    return GtmrParams(mass, np.diag([0.0075, 0.0075, 0.013]), pos, axes,
                      np.array([1.0, -1.0, 1.0, -1.0]), c_f, c_tau, gravity)


def tilted_hexarotor(mass=1.5, arm=0.3, cant_deg=10.0, c_f=8.5e-6, c_tau=1.4e-7,
                     gravity=GRAVITY) -> GtmrParams:
    """Hexarotor whose propellers are canted alternately about their arms."""
    ang = np.deg2rad(np.arange(6) * 60.0)
    pos = arm * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(6)])
    c = np.deg2rad(cant_deg)
    axes = []
    for i, a in enumerate(ang):
        sign = 1.0 if i % 2 == 0 else -1.0
        tangent = np.array([-np.sin(a), np.cos(a), 0.0])
        axes.append(np.cos(c) * np.array([0.0, 0.0, 1.0]) + sign * np.sin(c) * tangent)
    spin = np.array([1.0, -1.0] * 3)
    return GtmrParams(mass, np.diag([0.02, 0.02, 0.04]), pos, np.array(axes), spin, c_f, c_tau, gravity)


PRESETS = {"quadrotor": quadrotor, "tilted_hexarotor": tilted_hexarotor}


def make_state(p=(0, 0, 0), q=(1, 0, 0, 0), v=(0, 0, 0), omega=(0, 0, 0), Omega=None, params=None):
    if Omega is None:
        Omega = params.hover_speeds()
    return np.concatenate([np.asarray(p, float), np.asarray(q, float), np.asarray(v, float),
                           np.asarray(omega, float), np.asarray(Omega, float)])


def hover_state(params: GtmrParams, position=(0.0, 0.0, 0.0)):
    return make_state(p=position, Omega=params.hover_speeds())


def gtmr_derivative(x, u, params: GtmrParams):
    """Time derivative of the extended state under propeller acceleration ``u``.

    Newton-Euler rigid body: ``m dv/dt = R(q) F(Omega) - m g z``,
    ``I dw/dt = tau(Omega) - w x I w``, ``dq/dt = q ⊗ (0, w) / 2`` and
    ``dOmega/dt = u``, with thrust and torque quadratic in rotor speed.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, x.shape[-1])
    U = np.broadcast_to(np.asarray(u, dtype=float), (X.shape[0], params.n))
    qw, qx, qy, qz = X[:, 3], X[:, 4], X[:, 5], X[:, 6]
    wx, wy, wz = X[:, 10], X[:, 11], X[:, 12]
    Om2 = X[:, OMEGA0:] ** 2
    f = Om2 @ params.force_alloc.T
    tau = Om2 @ params.torque_alloc.T
    inv_n2 = 1.0 / (qw*qw + qx*qx + qy*qy + qz*qz)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    # R(q) f, written out to avoid building the matrices
    ax = ((1 - 2*(qy*qy + qz*qz)*inv_n2)*fx + 2*(qx*qy - qw*qz)*inv_n2*fy
          + 2*(qx*qz + qw*qy)*inv_n2*fz)
    ay = (2*(qx*qy + qw*qz)*inv_n2*fx + (1 - 2*(qx*qx + qz*qz)*inv_n2)*fy
          + 2*(qy*qz - qw*qx)*inv_n2*fz)
    az = (2*(qx*qz - qw*qy)*inv_n2*fx + 2*(qy*qz + qw*qx)*inv_n2*fy
          + (1 - 2*(qx*qx + qy*qy)*inv_n2)*fz)
    I = params.inertia
    Iw = X[:, 10:13] @ I.T
    gyro = np.empty_like(Iw)
    gyro[:, 0] = wy*Iw[:, 2] - wz*Iw[:, 1]
    gyro[:, 1] = wz*Iw[:, 0] - wx*Iw[:, 2]
    gyro[:, 2] = wx*Iw[:, 1] - wy*Iw[:, 0]
    out = np.empty_like(X)
    out[:, 0:3] = X[:, 7:10]
    out[:, 3] = 0.5*(-qx*wx - qy*wy - qz*wz)
    out[:, 4] = 0.5*(qw*wx + qy*wz - qz*wy)
    out[:, 5] = 0.5*(qw*wy - qx*wz + qz*wx)
    out[:, 6] = 0.5*(qw*wz + qx*wy - qy*wx)
    m = params.mass
    out[:, 7] = ax / m
    out[:, 8] = ay / m
    out[:, 9] = az / m - params.gravity
    out[:, 10:13] = (tau - gyro) @ params.inertia_inv.T
    out[:, OMEGA0:] = U
    return out[0] if single else out.reshape(x.shape)


def integrate_step(x, u, Ts: float, params: GtmrParams):
    """One classic RK4 step with the input held constant; renormalizes q.

    Rotor speeds are linear in the input, so they are advanced exactly as
    ``Omega + Ts * u``.
    """
    if not Ts > 0:
        raise ValueError("Ts must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = gtmr_derivative(x, u, params)
    k2 = gtmr_derivative(x + 0.5*Ts*k1, u, params)
    k3 = gtmr_derivative(x + 0.5*Ts*k2, u, params)
    k4 = gtmr_derivative(x + Ts*k3, u, params)
    out = x + (Ts/6.0) * (k1 + 2*k2 + 2*k3 + k4)
    out[..., Q] /= np.linalg.norm(out[..., Q], axis=-1, keepdims=True)
    out[..., OMEGA0:] = x[..., OMEGA0:] + Ts * u
    return out


SELECTORS = {"default": 4, "extended": 7}


def output_dim(selector: str) -> int:
    if selector not in SELECTORS:
        raise UnknownSelector(selector)
    return SELECTORS[selector]


def output_map(x, u=None, selector: str = "default"):
    """Tracked outputs: (p, yaw) by default, (p, yaw, v) when extended."""
    if selector not in SELECTORS:
        raise UnknownSelector(selector)
    x = np.asarray(x, dtype=float)
    yaw = yaw_of(x[..., Q])[..., None]
    parts = [x[..., P], yaw]
    if selector == "extended":
        parts.append(x[..., V])
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class AlignmentParams:
    """Communication parameters of the alignment constraint.

    ``g_min`` is the gain floor each link must exceed; ``mu1``/``mu2`` drive
    the exponential penalty that relaxes it inside the controller cost.
    """

    g_min: float = 0.5
    mu1: float = 50.0
    mu2: float = 50.0
    reject_margin: float = -0.2
    antenna: object = None

    def __post_init__(self):
        if self.antenna is None:
            object.__setattr__(self, "antenna", AntennaPattern.dipole())


def alignment_constraint(x, peer_pos, bs_pos, comm: AlignmentParams):
    """Worst antenna gain toward the peer and the BS, minus ``g_min``.

    Positive when both links sit above the gain floor.
    """
    x = np.asarray(x, dtype=float)
    R = quat_to_rotmat(x[..., Q])
    p = x[..., P]
    gains = []
    for target in (peer_pos, bs_pos):
        d = np.asarray(target, dtype=float) - p
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        gains.append(comm.antenna.gain(np.einsum("...ji,...j->...i", R, d)))
    return np.minimum(gains[0], gains[1]) - comm.g_min
