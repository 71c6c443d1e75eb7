"""Quintic motion primitives and sampled trajectories.

Each axis follows a quintic in position driven by three design parameters
(alpha, beta, gamma)::

    p(t) = alpha/120 t^5 + beta/24 t^4 + gamma/6 t^3 + a0/2 t^2 + v0 t + p0
    v(t) = alpha/24  t^4 + beta/6  t^3 + gamma/2 t^2 + a0 t + v0
    a(t) = alpha/6   t^3 + beta/2  t^2 + gamma t + a0
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DiscontinuousChain, OutOfDomain, SingularFit
from .geometry import GRAVITY, attitude_matrices, rotmat_to_quat

JUNCTION_TOL = 1e-6


class AxisState(NamedTuple):
    p: float
    v: float
    a: float


REST = AxisState(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PrimitiveSegment:
    alpha: float
    beta: float
    gamma: float
    initial: AxisState
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        object.__setattr__(self, "initial", AxisState(*map(float, self.initial)))


def _evaluate(alpha, beta, gamma, p0, v0, a0, t):
    p = alpha/120*t**5 + beta/24*t**4 + gamma/6*t**3 + a0/2*t**2 + v0*t + p0
    v = alpha/24*t**4 + beta/6*t**3 + gamma/2*t**2 + a0*t + v0
    a = alpha/6*t**3 + beta/2*t**2 + gamma*t + a0
    return p, v, a


def evaluate_segment(seg: PrimitiveSegment, t) -> AxisState:
    """State of ``seg`` at local time ``t`` (scalar or array) in [0, duration]."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > seg.duration):
        raise OutOfDomain(f"t outside [0, {seg.duration}]")
    p0, v0, a0 = seg.initial
    return AxisState(*_evaluate(seg.alpha, seg.beta, seg.gamma, p0, v0, a0, t_arr if t_arr.ndim else float(t)))


def fit_coefficients(initial, final, T: float):
    """Closed-form (alpha, beta, gamma) hitting ``final`` at time ``T``.

    Broadcasts over array-valued states, which the planner relies on.
    """
    if not T > 0:
        raise SingularFit(f"boundary fit needs T > 0, got {T}")
    p0, v0, a0 = (np.asarray(x, dtype=float) for x in initial)
    pf, vf, af = (np.asarray(x, dtype=float) for x in final)
    dp = pf - p0 - v0*T - 0.5*a0*T**2
    dv = vf - v0 - a0*T
    da = af - a0
    T2, T3 = T*T, T**3
    alpha = (720*dp - 360*T*dv + 60*T2*da) / T**5
    beta = (-360*T*dp + 168*T2*dv - 24*T3*da) / T**5
    gamma = (60*T2*dp - 24*T3*dv + 3*T**4*da) / T**5
    return alpha, beta, gamma


def fit_boundary(initial: AxisState, final: AxisState, T: float) -> PrimitiveSegment:
    alpha, beta, gamma = fit_coefficients(initial, final, T)
    return PrimitiveSegment(float(alpha), float(beta), float(gamma), AxisState(*initial), float(T))


def sample_count(T: float, Ts: float) -> int:
    # tolerate T/Ts landing a hair below an integer
    return int(np.floor(T / Ts + 1e-9)) + 1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled 3-axis trajectory on the grid ``t = k*Ts``.

    ``pos``, ``vel``, ``acc`` are (N+1, 3) arrays; ``quat`` holds the
    thrust-aligned attitude of each sample. Arrays are read-only.
    """

    Ts: float
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    gravity: float = GRAVITY
    yaw: float = 0.0
    quat: np.ndarray = field(init=False, repr=False)
    rotmats: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arrays = {}
        for name in ("pos", "vel", "acc"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1, 3)
            arrays[name] = arr
        n = {a.shape[0] for a in arrays.values()}
        if len(n) != 1:
            raise ValueError("pos, vel, acc must have the same number of samples")
        rotmats = attitude_matrices(arrays["acc"], self.gravity, self.yaw).reshape(-1, 3, 3)
        arrays["rotmats"] = rotmats
        arrays["quat"] = rotmat_to_quat(rotmats).reshape(-1, 4)
        for name, arr in arrays.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_samples(self) -> int:
        return self.pos.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.Ts

    @property
    def horizon(self) -> float:
        return (self.n_samples - 1) * self.Ts

    @classmethod
    def hover(cls, position, T: float, Ts: float, **kw) -> "Trajectory":
        n = sample_count(T, Ts)
        pos = np.tile(np.asarray(position, dtype=float), (n, 1))
        return cls(Ts, pos, np.zeros_like(pos), np.zeros_like(pos), **kw)

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.pos, axis=0), axis=1)))

    def at(self, times):
        """Linearly interpolated (pos, vel, acc) at arbitrary times; holds the end state."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        t = self.t
        return tuple(np.column_stack([np.interp(times, t, arr[:, j]) for j in range(3)])
                     for arr in (self.pos, self.vel, self.acc))

    def resample(self, Ts: float, T: float | None = None) -> "Trajectory":
        """Linear interpolation onto a new grid; holds the last sample past the end."""
        T = self.horizon if T is None else T
        tq = np.arange(sample_count(T, Ts)) * Ts
        return Trajectory(Ts, *self.at(tq), gravity=self.gravity, yaw=self.yaw)

    def to_csv(self, path) -> None:
        header = ["t", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az", "qw", "qx", "qy", "qz"]
        rows = np.column_stack([self.t, self.pos, self.vel, self.acc, self.quat])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([f"{x:.9g}" for x in row])


def _check_chain(chain: Sequence[PrimitiveSegment], axis: int) -> None:
    for i, (left, right) in enumerate(zip(chain[:-1], chain[1:])):
        end = evaluate_segment(left, left.duration)
        gap = np.max(np.abs(np.subtract(end, right.initial)))
        if gap > JUNCTION_TOL:
            raise DiscontinuousChain(f"axis {axis}: junction {i} jumps by {gap:.3g}")


def sample_trajectory(segments: Sequence[Sequence[PrimitiveSegment]], Ts: float,
                      gravity: float = GRAVITY, yaw: float = 0.0) -> Trajectory:
    """Sample three per-axis segment chains on the grid ``k*Ts``.

    ``segments[j]`` is the chain for axis j. All chains must share a total
    duration; junctions must be continuous in p, v and a.
    """
    if len(segments) != 3:
        raise ValueError("need one segment chain per axis")
    totals = [sum(s.duration for s in chain) for chain in segments]
    if max(totals) - min(totals) > JUNCTION_TOL:
        raise DiscontinuousChain(f"axis chains have different durations: {totals}")
    for j, chain in enumerate(segments):
        _check_chain(chain, j)
    T = totals[0]
    t = np.arange(sample_count(T, Ts)) * Ts
    out = np.empty((3, 3, t.size))
    for j, chain in enumerate(segments):
        starts = np.cumsum([0.0] + [s.duration for s in chain[:-1]])
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(chain) - 1)
        for i, seg in enumerate(chain):
            mask = idx == i
            local = np.clip(t[mask] - starts[i], 0.0, seg.duration)
            p0, v0, a0 = seg.initial
            out[:, j, mask] = _evaluate(seg.alpha, seg.beta, seg.gamma, p0, v0, a0, local)
    return Trajectory(Ts, out[0].T, out[1].T, out[2].T, gravity=gravity, yaw=yaw)
