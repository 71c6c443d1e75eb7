"""Receding-horizon tracking control of the multirotor relay.

Each step solves a single-shooting program over ``N`` propeller-acceleration
inputs: weighted output tracking, plus an exponential penalty that keeps the
antenna gain toward the peer and the base station above a floor. The
solver is Levenberg-Marquardt on the stacked residual vector with a
batched forward-difference Jacobian. Rotor speed and rotor acceleration
bounds are enforced exactly by a sequential clamp of the input sequence.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import RelayLinks, rate
from .constraints import Constraint, penalty_value
from .errors import SolverDiverged
from .geometry import Pose, attitude_matrices, quat_to_rotmat
from .gtmr import (OMEGA0, P, Q, AlignmentParams, GtmrParams, alignment_constraint,
                   integrate_step, output_dim, output_map)
from .kinematics import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NmpcProblem:
    """Controller settings; ``params`` is the controller's internal model."""

    params: GtmrParams
    N: int = 20
    Ts: float = 0.05
    Q: np.ndarray | None = None
    R_u: float = 1e-7
    selector: str = "default"
    omega_min: float = 100.0
    omega_max: float = 900.0
    rate_min: float = -5000.0
    rate_max: float = 5000.0
    alignment: AlignmentParams | None = None
    max_iters: int = 8
    rel_tol: float = 1e-6
    fd_step: float = 1.0
    reference: np.ndarray | None = None

    def __post_init__(self):
        ny = output_dim(self.selector)
        if self.Q is None:
            w = [10.0, 10.0, 10.0, 1.0] + [1.0] * (ny - 4)
            object.__setattr__(self, "Q", np.diag(w))
        Qm = np.asarray(self.Q, dtype=float)
        if Qm.shape != (ny, ny) or not np.allclose(Qm, Qm.T) or np.any(np.linalg.eigvalsh(Qm) <= 0):
            raise ValueError(f"Q must be a symmetric positive definite {ny}x{ny} matrix")
        object.__setattr__(self, "Q", Qm)
        if self.N < 1 or not self.Ts > 0:
            raise ValueError("need N >= 1 and Ts > 0")
        lo = np.broadcast_to(self.omega_min, (self.params.n,))
        hi = np.broadcast_to(self.omega_max, (self.params.n,))
        if np.any(lo >= hi):
            raise ValueError("omega_min must be below omega_max")
        if not self.rate_min <= 0 <= self.rate_max:
            raise ValueError("rotor acceleration bounds must bracket zero")

    @property
    def ny(self) -> int:
        return output_dim(self.selector)

    @property
    def sqrt_Q(self) -> np.ndarray:
        return np.linalg.cholesky(self.Q).T


@dataclass
class NmpcResult:
    u0: np.ndarray
    controls: np.ndarray
    predicted: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def rollout(x0, U, params: GtmrParams, Ts: float):
    """States (..., N+1, nx) produced by input sequences U (..., N, n)."""
    U = np.asarray(U, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), U.shape[:-2] + (np.size(x0),)).copy()
    out = [x]
    for k in range(U.shape[-2]):
        x = integrate_step(x, U[..., k, :], Ts, params)
        out.append(x)
    return np.stack(out, axis=-2)


def project_controls(U, Omega0, problem: NmpcProblem):
    """Clamp inputs so both rotor accelerations and resulting speeds stay in bounds.

    Sweeps forward in time, since rotor speeds accumulate ``Ts * u``.
    """
    U = np.array(U, dtype=float)
    n = problem.params.n
    lo_w = np.broadcast_to(problem.omega_min, (n,)).astype(float)
    hi_w = np.broadcast_to(problem.omega_max, (n,)).astype(float)
    Ts = problem.Ts
    Om = np.asarray(Omega0, dtype=float).copy()
    for k in range(U.shape[0]):
        lo = np.maximum(problem.rate_min, (lo_w - Om) / Ts)
        hi = np.minimum(problem.rate_max, (hi_w - Om) / Ts)
        hi = np.maximum(hi, lo)
        u = np.clip(U[k], lo, hi)
        nxt = Om + Ts * u
        # nudge by ulps where rounding lands a hair outside the speed box
        while np.any(nxt > hi_w):
            bad = nxt > hi_w
            u[bad] = np.nextafter(u[bad], -np.inf)
            nxt = Om + Ts * u
        while np.any(nxt < lo_w):
            bad = nxt < lo_w
            u[bad] = np.nextafter(u[bad], np.inf)
            nxt = Om + Ts * u
        U[k] = u
        Om = nxt
    return U


def _wrap(a):
    return (a + np.pi) % (2*np.pi) - np.pi


class _Residuals:
    def __init__(self, problem: NmpcProblem, y_ref, peer_pos, bs_pos):
        self.problem = problem
        self.y_ref = y_ref
        self.peer_pos = peer_pos
        self.bs_pos = bs_pos
        self.L = problem.sqrt_Q
        al = problem.alignment
        self.align = None
        if al is not None and peer_pos is not None and bs_pos is not None:
            self.align = Constraint("alignment", "penalty", mu1=al.mu1, mu2=al.mu2)

    def __call__(self, X, U):
        pr = self.problem
        err = self.y_ref - output_map(X, selector=pr.selector)
        err[..., 3] = _wrap(err[..., 3])
        parts = [(err @ self.L.T).reshape(err.shape[:-2] + (-1,)),
                 np.sqrt(pr.R_u) * U.reshape(U.shape[:-2] + (-1,))]
        if self.align is not None:
            g = alignment_constraint(X[..., 1:, :], self.peer_pos[1:], self.bs_pos[1:], pr.alignment)
            parts.append(np.sqrt(penalty_value(self.align, -g)))
        return np.concatenate(parts, axis=-1)

    def margin(self, X):
        if self.problem.alignment is None or self.peer_pos is None or self.bs_pos is None:
            return np.inf
        return float(np.min(alignment_constraint(X[1:], self.peer_pos[1:], self.bs_pos[1:],
                                                 self.problem.alignment)))


def _horizon_positions(pos, N):
    if pos is None:
        return None
    pos = np.asarray(pos, dtype=float)
    return np.broadcast_to(pos, (N + 1, 3)) if pos.ndim == 1 else pos


def nmpc_step(problem: NmpcProblem, current, y_ref=None, warm_start=None,
              peer_pos=None, bs_pos=None) -> NmpcResult:
    """Solve one horizon and return the first input to apply.

    ``y_ref`` is the (N+1, ny) output reference (default: ``problem.reference``,
    else hold the current output). ``peer_pos``/``bs_pos`` may be fixed
    3-vectors or (N+1, 3) predictions; they enable the alignment penalty.
    On divergence the zero input (hold rotor speeds) is returned with
    ``diagnostics["fallback"] = True``.
    """
    pr = problem
    N, n = pr.N, pr.params.n
    x0 = np.asarray(current, dtype=float)
    if y_ref is None:
        y_ref = pr.reference
    if y_ref is None:
        y_ref = np.tile(output_map(x0, selector=pr.selector), (N + 1, 1))
    y_ref = np.asarray(y_ref, dtype=float)
    res = _Residuals(pr, y_ref, _horizon_positions(peer_pos, N), _horizon_positions(bs_pos, N))
    Omega0 = x0[OMEGA0:]
    U = np.zeros((N, n)) if warm_start is None else np.asarray(warm_start, dtype=float)
    U = project_controls(U, Omega0, pr)
    diag = {"iterations": 0, "merit_history": [], "fallback": False, "alignment_rejected": False}

    try:
        X = rollout(x0, U, pr.params, pr.Ts)
        r = res(X, U)
        merit = float(r @ r)
        if not np.isfinite(merit):
            raise SolverDiverged("non-finite merit at the initial guess")
        diag["merit_history"].append(merit)
        warm = (U.copy(), X.copy())
        lam = 1e-3
        h = pr.fd_step
        nz = N * n
        for it in range(pr.max_iters):
            Ub = U.reshape(1, nz) + h * np.eye(nz)
            Rb = res(rollout(x0, Ub.reshape(-1, N, n), pr.params, pr.Ts), Ub.reshape(-1, N, n))
            J = (Rb - r).T / h
            if not np.all(np.isfinite(J)):
                raise SolverDiverged("non-finite Jacobian")
            JTJ = J.T @ J
            g = J.T @ r
            dscale = np.diag(JTJ).copy() + 1e-12
            accepted = False
            for _ in range(8):
                A = JTJ + lam * np.diag(dscale)
                step = np.linalg.solve(A, -g)
                Uc = project_controls(U + step.reshape(N, n), Omega0, pr)
                Xc = rollout(x0, Uc, pr.params, pr.Ts)
                rc = res(Xc, Uc)
                mc = float(rc @ rc)
                if np.isfinite(mc) and mc < merit:
                    accepted = True
                    break
                lam *= 10.0
            diag["iterations"] = it + 1
            if not accepted:
                break
            gain = merit - mc
            U, X, r, merit = Uc, Xc, rc, mc
            diag["merit_history"].append(merit)
            lam = max(lam / 3.0, 1e-9)
            if gain <= pr.rel_tol * merit + 1e-16:
                break
        margin = res.margin(X)
        if margin < (pr.alignment.reject_margin if pr.alignment else -np.inf):
            warm_margin = res.margin(warm[1])
            if warm_margin > margin:
                U, X = warm
                margin = warm_margin
                diag["alignment_rejected"] = True
        diag["merit"] = merit
        diag["align_margin"] = margin
    except (SolverDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("NMPC step fell back to hold: %s", exc)
        U = np.zeros((N, n))
        X = rollout(x0, U, pr.params, pr.Ts)
        diag["fallback"] = True
        diag["error"] = str(exc)
    return NmpcResult(U[0].copy(), U, X, diag)


class NmpcController:
    """Keeps the shifted previous solution as the next warm start."""

    def __init__(self, problem: NmpcProblem):
        self.problem = problem
        self._warm = None

    def step(self, current, y_ref=None, peer_pos=None, bs_pos=None) -> NmpcResult:
        out = nmpc_step(self.problem, current, y_ref, self._warm, peer_pos, bs_pos)
        self._warm = np.vstack([out.controls[1:], out.controls[-1:]])
        return out


class TrajectoryReference:
    """Output reference windows taken from a planned trajectory (yaw held at 0)."""

    def __init__(self, traj: Trajectory, selector: str = "default", yaw: float = 0.0):
        self.traj = traj
        self.selector = selector
        self.yaw = yaw

    def window(self, t0: float, N: int, Ts: float):
        times = t0 + np.arange(N + 1) * Ts
        pos, vel, _ = self.traj.at(times)
        cols = [pos, np.full((N + 1, 1), self.yaw)]
        if self.selector == "extended":
            cols.append(vel)
        return np.hstack(cols)


class ConstantReference:
    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)

    def window(self, t0: float, N: int, Ts: float):
        return np.tile(self.y, (N + 1, 1))


@dataclass
class RunTrace:
    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    snr1: np.ndarray
    snr2: np.ndarray
    rate_e2e: np.ndarray
    cum_bits: np.ndarray
    align_margin: np.ndarray
    n_rotors: int
    diagnostics: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "samples": int(self.t.size),
            "total_bits": float(self.cum_bits[-1]) if self.cum_bits.size else 0.0,
            "min_snr": float(np.min(np.minimum(self.snr1, self.snr2))) if self.snr1.size else None,
            "fallbacks": int(sum(d.get("fallback", False) for d in self.diagnostics)),
            "alignment_rejections": int(sum(d.get("alignment_rejected", False) for d in self.diagnostics)),
            "min_align_margin": float(np.min(self.align_margin)) if np.all(np.isfinite(self.align_margin)) else None,
            "mean_iterations": float(np.mean([d["iterations"] for d in self.diagnostics])) if self.diagnostics else 0.0,
        }

    def to_csv(self, path) -> None:
        n = self.n_rotors
        header = (["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
                   "omega_x", "omega_y", "omega_z"] + [f"Omega_{i + 1}" for i in range(n)]
                  + ["snr1", "snr2", "rate_e2e", "cum_bits", "align_margin"])
        rows = np.column_stack([self.t, self.states, self.snr1, self.snr2, self.rate_e2e,
                                self.cum_bits, self.align_margin])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([f"{x:.9g}" for x in row])

    def diagnostics_json(self, path) -> None:
        clean = []
        for d in self.diagnostics:
            clean.append({k: v for k, v in d.items() if k != "merit_history"}
                         | {"merit_steps": len(d.get("merit_history", []))})
        with open(path, "w") as fh:
            json.dump({"summary": self.summary(), "steps": clean}, fh, indent=1, sort_keys=True,
                      default=float)


def _peer_state(peer: Trajectory | None, times):
    if peer is None:
        return None, None
    pos, _, acc = peer.at(times)
    return pos, attitude_matrices(acc, peer.gravity, peer.yaw).reshape(-1, 3, 3)


def simulate_closed_loop(problem: NmpcProblem, initial, plant_params: GtmrParams | None = None,
                         duration: float = 0.0, reference=None, peer: Trajectory | None = None,
                         bs: Pose | None = None, links: RelayLinks | None = None) -> RunTrace:
    """Alternate controller solves and plant integration for ``duration`` seconds.

    The plant may differ from the controller model (``plant_params``). With a
    peer trajectory, a BS pose and links, every sample records both link
    SNRs (using the plant's true attitude), the end-to-end rate, cumulative
    bits ``Ts * sum(rate)`` and the alignment margin.
    """
    pr = problem
    plant = pr.params if plant_params is None else plant_params
    steps = duration / pr.Ts
    K = int(round(steps))
    if K < 0 or abs(steps - K) > 1e-9 * max(1.0, steps):
        raise ValueError(f"duration {duration} is not a multiple of Ts={pr.Ts}")
    ctrl = NmpcController(pr)
    x = np.asarray(initial, dtype=float).copy()
    if reference is None:
        reference = ConstantReference(output_map(x, selector=pr.selector))
    t = np.arange(K + 1) * pr.Ts
    states = np.empty((K + 1, x.size))
    controls = np.zeros((K + 1, plant.n))
    diags = []
    bs_pos = None if bs is None else bs.position
    for k in range(K + 1):
        states[k] = x
        if k == K:
            break
        y_ref = reference.window(t[k], pr.N, pr.Ts)
        peer_pos = None
        if peer is not None and pr.alignment is not None:
            peer_pos, _ = _peer_state(peer, t[k] + np.arange(pr.N + 1) * pr.Ts)
        out = ctrl.step(x, y_ref, peer_pos, bs_pos)
        controls[k] = out.u0
        diags.append(out.diagnostics)
        x = integrate_step(x, out.u0, pr.Ts, plant)

    nan = np.full(K + 1, np.nan)
    snr1, snr2, margin = nan.copy(), nan.copy(), nan.copy()
    if peer is not None and bs is not None and links is not None:
        ppos, pR = _peer_state(peer, t)
        R = quat_to_rotmat(states[:, Q])
        snr1, snr2 = links.snrs(states[:, P], R, ppos, pR, bs.position, quat_to_rotmat(bs.orientation))
        al = pr.alignment or AlignmentParams(g_min=0.0, antenna=links.relay_antenna)
        margin = alignment_constraint(states, ppos, bs.position, al)
    r = np.minimum(rate(snr1), rate(snr2))
    cum = pr.Ts * np.cumsum(r)
    return RunTrace(t, states, controls, snr1, snr2, r, cum, margin, plant.n, diags)
