"""Relay trajectory optimization over quintic motion primitives.

The relay path is parameterized by position/velocity/acceleration states on
``M`` equally spaced knots; consecutive knots are joined by boundary-fitted
quintics. Sampled states are therefore affine in the knot states, which
gives an exact linear chain rule from per-sample sensitivities to knot
gradients.

The objective sums, over every sample, the smooth max of the two inverse
link rates (peer -> relay and relay -> base station), with antenna gains
evaluated at the tilt implied by each sample's acceleration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import RelayLinks, end_to_end_rate, smooth_objective_term
from .constraints import Constraint, ConstraintSet, penalty_value
from .errors import HorizonMismatch, InfeasibleInitialGuess
from .geometry import GRAVITY, Pose, attitude_matrices, quat_to_rotmat
from .kinematics import (AxisState, Trajectory, _evaluate, fit_boundary, fit_coefficients,
                         sample_count, sample_trajectory)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
COMM_CONSTRAINT_TYPES = ("min_bits", "min_snr")


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 1000
    tol_obj: float = 1e-8
    restarts: int = 4
    seed: int = 0
    perturbation: float = 0.2
    armijo: float = 1e-4


@dataclass(frozen=True, eq=False)
class PlannerProblem:
    """Everything needed to plan the relay (UAV-1) trajectory.

    ``peer`` is the UAV-2 trajectory sampled on the planner grid. Free knot
    states live on the axes listed in ``free_axes``; the others stay at the
    initial position. With ``final_state`` given the last knot is pinned to
    ``(position, velocity)`` with zero acceleration.
    """

    bs: Pose
    peer: Trajectory
    relay_initial: tuple
    links: RelayLinks = field(default_factory=RelayLinks)
    v_max: float = 5.0
    a_max: float = 3.0
    T: float = 20.0
    Ts: float = 0.1
    M: int = 5
    p: float = 8.0
    free_axes: tuple = (0, 1, 2)
    final_state: tuple | None = None
    zero_tilt_endpoints: bool = True
    gravity: float = GRAVITY
    bound_penalty: Constraint = field(
        default_factory=lambda: Constraint("dense_bounds", "penalty", mu1=1.0, mu2=50.0))
    constraints: ConstraintSet = field(default_factory=ConstraintSet)

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("velocity and acceleration bounds must be positive")
        if self.M < 2:
            raise ValueError("need at least two knots")
        if self.p < 1:
            raise ValueError("p-norm exponent must be >= 1")
        init = tuple(np.asarray(x, dtype=float).reshape(3) for x in self.relay_initial)
        object.__setattr__(self, "relay_initial", init)
        if self.final_state is not None:
            fin = tuple(np.asarray(x, dtype=float).reshape(3) for x in self.final_state)
            object.__setattr__(self, "final_state", fin)
        object.__setattr__(self, "constraints", ConstraintSet(self.constraints))
        for c in self.constraints:
            if c.params.get("type") not in COMM_CONSTRAINT_TYPES:
                raise ValueError(f"constraint {c.id!r}: params.type must be one of {COMM_CONSTRAINT_TYPES}")
        if self.peer.n_samples != self.n_samples or not np.isclose(self.peer.Ts, self.Ts):
            raise HorizonMismatch(
                f"peer trajectory has {self.peer.n_samples} samples at Ts={self.peer.Ts}; "
                f"planner grid needs {self.n_samples} at Ts={self.Ts}")

    @property
    def n_samples(self) -> int:
        return sample_count(self.T, self.Ts)

    @property
    def knot_spacing(self) -> float:
        return self.T / (self.M - 1)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.Ts


@dataclass
class PlannerSolution:
    trajectory: Trajectory
    objective: float
    snr_relay_bs: np.ndarray
    snr_peer_relay: np.ndarray
    knots: np.ndarray
    iterations: int
    converged: bool
    max_violation: float
    history: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    constraint_values: dict = field(default_factory=dict)

    @property
    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "max_violation": self.max_violation,
            "objective": self.objective,
            "restart_objectives": [r["objective"] for r in self.restarts],
            "constraints": dict(self.constraint_values),
        }


def _trapezoid_weights(n: int, Ts: float) -> np.ndarray:
    w = np.full(n, Ts)
    if n == 1:
        return np.zeros(1)
    w[[0, -1]] = 0.5 * Ts
    return w


def bound_projection(vel, acc, v_max: float, a_max: float):
    """Clamp knot velocities and accelerations componentwise into the box."""
    return np.clip(vel, -v_max, v_max), np.clip(acc, -a_max, a_max)


def objective(traj: Trajectory, problem: PlannerProblem) -> float:
    """Sum over samples of the smooth inverse end-to-end rate."""
    if traj.n_samples != problem.n_samples or not np.isclose(traj.Ts, problem.Ts):
        raise HorizonMismatch(
            f"trajectory has {traj.n_samples} samples, problem expects {problem.n_samples}")
    snr10, snr21 = _link_snrs(problem, traj.pos, traj.rotmats)
    return float(np.sum(smooth_objective_term(snr10, snr21, problem.p)))


def _link_snrs(problem, pos, rotmats):
    return problem.links.snrs(pos, rotmats, problem.peer.pos, problem.peer.rotmats,
                              problem.bs.position, quat_to_rotmat(problem.bs.orientation))


class KnotParameterization:
    """Affine map from the free decision vector to knots and dense samples.

    Knot array layout is ``(M, 3 axes, 3 quantities)`` with quantities
    ordered (p, v, a).
    """

    def __init__(self, problem: PlannerProblem):
        self.problem = problem
        M = problem.M
        p0, v0, a0 = problem.relay_initial
        base = np.zeros((M, 3, 3))
        base[0] = np.column_stack([p0, v0, a0])
        # axes that are not optimized hover at their initial position
        base[1:, :, 0] = p0
        if problem.final_state is not None:
            pf, vf = problem.final_state
            base[-1] = np.column_stack([pf, vf, np.zeros(3)])
        free = np.zeros((M, 3, 3), dtype=bool)
        free[1:, list(problem.free_axes), :] = True
        if problem.final_state is not None:
            free[-1] = False
        elif problem.zero_tilt_endpoints:
            free[-1, :, 2] = False
        self.base = base
        self.free = free
        self.nz = int(free.sum())
        self._build_sample_maps()

    def knots(self, z) -> np.ndarray:
        K = self.base.copy()
        K[self.free] = z
        return K

    def decision(self, K) -> np.ndarray:
        return np.asarray(K)[self.free].copy()

    def _samples_linear(self, K):
        """Dense (p, v, a) samples for a knot array, shape (3, N+1, 3)."""
        pr = self.problem
        h = pr.knot_spacing
        t = pr.t
        seg = np.clip((t / h + 1e-12).astype(int), 0, pr.M - 2)
        tau = np.clip(t - seg * h, 0.0, h)
        start = K[seg]          # (N+1, 3, 3)
        end = K[seg + 1]
        alpha, beta, gamma = fit_coefficients(
            (start[..., 0], start[..., 1], start[..., 2]),
            (end[..., 0], end[..., 1], end[..., 2]), h)
        tt = tau[:, None]
        p, v, a = _evaluate(alpha, beta, gamma, start[..., 0], start[..., 1], start[..., 2], tt)
        return np.stack([p, v, a])

    def _build_sample_maps(self):
        offset = self._samples_linear(self.knots(np.zeros(self.nz)))
        J = np.empty(offset.shape + (self.nz,))
        for i in range(self.nz):
            e = np.zeros(self.nz)
            e[i] = 1.0
            J[..., i] = self._samples_linear(self.knots(e)) - offset
        self.offset = offset
        self.J = J

    def samples(self, z):
        return self.offset + self.J @ z

    def trajectory(self, z) -> tuple[Trajectory, list]:
        """Exact primitive-chain trajectory for decision vector ``z``."""
        return knot_trajectory(self.problem, self.knots(z))


def knot_trajectory(problem: PlannerProblem, knots, Ts: float | None = None):
    """Sample the primitive chain through ``knots`` on the grid ``k*Ts``.

    Returns ``(trajectory, chains)``. ``Ts`` defaults to the planner grid;
    any step dividing the horizon gives exact samples of the same path.
    """
    K = np.asarray(knots, dtype=float)
    h = problem.knot_spacing
    chains = [[fit_boundary(AxisState(*K[i, j]), AxisState(*K[i + 1, j]), h)
               for i in range(problem.M - 1)] for j in range(3)]
    Ts = problem.Ts if Ts is None else Ts
    return sample_trajectory(chains, Ts, gravity=problem.gravity), chains


class RelayObjective:
    """Augmented objective on the decision vector, with its gradient.

    Value = link objective + exponential penalties on dense-grid velocity and
    acceleration bounds + any relaxed communication constraints. The gradient
    chains exact sample-to-knot Jacobians with central differences of the
    per-sample link quantities.
    """

    def __init__(self, problem: PlannerProblem, fd_pos: float = 1e-5, fd_acc: float = 1e-6):
        self.problem = problem
        self.param = KnotParameterization(problem)
        self.fd_pos = fd_pos
        self.fd_acc = fd_acc
        self.weights = _trapezoid_weights(problem.n_samples, problem.Ts)

    def _quantities(self, pos, acc):
        """Per-sample (smooth term, end-to-end rate, weaker-link SNR)."""
        pr = self.problem
        R = attitude_matrices(acc, pr.gravity)
        snr10, snr21 = _link_snrs(pr, pos, R)
        return np.stack([smooth_objective_term(snr10, snr21, pr.p),
                         end_to_end_rate(snr10, snr21), np.minimum(snr10, snr21)])

    def _comm_terms(self, qty):
        """Relaxed communication-constraint cost and its derivative w.r.t. ``qty``."""
        total = 0.0
        dq = np.zeros_like(qty)
        for c in self.problem.constraints:
            if c.kind == "hard":
                continue
            kind = c.params["type"]
            if kind == "min_bits":
                target = c.params["bits"]
                g = (target - self.weights @ qty[1]) / target
                dg = -self.weights / target
                row = 1
            else:
                gamma0 = c.params["gamma0"]
                g = 1.0 - qty[2] / gamma0
                dg = np.full(qty.shape[1], -1.0 / gamma0)
                row = 2
            if c.kind == "penalty":
                pen = penalty_value(c, g)
                total += float(np.sum(pen))
                dq[row] += c.mu2 * pen * dg
            else:
                # optimal slack is max(0, g), leaving ks * max(0, g)^2
                s = np.maximum(0.0, g)
                total += float(np.sum(c.ks * s * s))
                dq[row] += 2.0 * c.ks * s * dg
        return total, dq

    def constraint_values(self, z) -> dict:
        """Aggregated g for every configured communication constraint (g <= 0 holds)."""
        S = self.param.samples(z)
        qty = self._quantities(S[0], S[2])
        out = {}
        for c in self.problem.constraints:
            if c.params["type"] == "min_bits":
                out[c.id] = float((c.params["bits"] - self.weights @ qty[1]) / c.params["bits"])
            else:
                out[c.id] = float(np.max(1.0 - qty[2] / c.params["gamma0"]))
        return out

    def _link_terms(self, pos, acc):
        return self._quantities(pos, acc)[0]

    def _bound_terms(self, vel, acc):
        pr = self.problem
        c = pr.bound_penalty
        gv = np.stack([vel / pr.v_max - 1.0, -vel / pr.v_max - 1.0])
        ga = np.stack([acc / pr.a_max - 1.0, -acc / pr.a_max - 1.0])
        return penalty_value(c, gv), penalty_value(c, ga)

    def value(self, z) -> float:
        S = self.param.samples(z)
        pos, vel, acc = S[0], S[1], S[2]
        qty = self._quantities(pos, acc)
        pv, pa = self._bound_terms(vel, acc)
        comm, _ = self._comm_terms(qty)
        return float(np.sum(qty[0]) + comm + np.sum(pv) + np.sum(pa))

    def link_value(self, z) -> float:
        S = self.param.samples(z)
        return float(np.sum(self._link_terms(S[0], S[2])))

    def value_and_grad(self, z):
        pr = self.problem
        S = self.param.samples(z)
        pos, vel, acc = S[0], S[1], S[2]
        qty = self._quantities(pos, acc)
        comm, dq = self._comm_terms(qty)
        dq[0] += 1.0
        d_pos = np.empty_like(pos)
        d_acc = np.empty_like(acc)
        for j in range(3):
            for which, out, h in ((0, d_pos, self.fd_pos), (1, d_acc, self.fd_acc)):
                args_p = [pos.copy(), acc.copy()]
                args_m = [pos.copy(), acc.copy()]
                args_p[which][:, j] += h
                args_m[which][:, j] -= h
                dqty = (self._quantities(*args_p) - self._quantities(*args_m)) / (2*h)
                out[:, j] = np.sum(dq * dqty, axis=0)
        pv, pa = self._bound_terms(vel, acc)
        c = pr.bound_penalty
        # d/dx mu1 exp(mu2 g) = mu2 * P * dg/dx
        d_vel = c.mu2 * (pv[0] - pv[1]) / pr.v_max
        d_acc = d_acc + c.mu2 * (pa[0] - pa[1]) / pr.a_max
        J = self.param.J
        grad = (np.einsum("kjn,kj->n", J[0], d_pos)
                + np.einsum("kjn,kj->n", J[1], d_vel)
                + np.einsum("kjn,kj->n", J[2], d_acc))
        val = float(np.sum(qty[0]) + comm + np.sum(pv) + np.sum(pa))
        return val, grad

    def gradient(self, z):
        return self.value_and_grad(z)[1]

    def violation(self, z) -> float:
        """Worst dense-grid bound excess (<= 0 when feasible)."""
        S = self.param.samples(z)
        pr = self.problem
        return float(max(np.max(np.abs(S[1])) - pr.v_max, np.max(np.abs(S[2])) - pr.a_max))


def _scales(problem: PlannerProblem, param: KnotParameterization):
    per = np.empty((problem.M, 3, 3))
    per[..., 0] = max(problem.v_max * problem.knot_spacing, 1.0)
    per[..., 1] = problem.v_max
    per[..., 2] = problem.a_max
    return per[param.free]


def straight_line_guess(problem: PlannerProblem, param: KnotParameterization) -> np.ndarray:
    """Constant-velocity knots from the start toward the BS / peer midpoint."""
    p0 = problem.relay_initial[0]
    target = p0.copy()
    mid = 0.5 * (problem.bs.position + problem.peer.pos[-1])
    axes = list(problem.free_axes)
    target[axes] = mid[axes]
    vel = (target - p0) / problem.T
    K = param.base.copy()
    for i in range(1, problem.M):
        frac = i / (problem.M - 1)
        K[i, axes, 0] = p0[axes] + frac * (target - p0)[axes]
        K[i, axes, 1] = vel[axes]
        K[i, axes, 2] = 0.0
    return param.decision(K)


def _project(param: KnotParameterization, problem: PlannerProblem, z):
    K = param.knots(z)
    K[..., 1], K[..., 2] = bound_projection(K[..., 1], K[..., 2], problem.v_max, problem.a_max)
    return param.decision(K)


def _make_feasible(fun: RelayObjective, z_guess, z_safe):
    """Shrink ``z_guess`` toward ``z_safe`` until the dense grid is feasible."""
    if fun.violation(z_guess) <= FEAS_TOL:
        return z_guess
    lam = 1.0
    for _ in range(40):
        lam *= 0.5
        z = z_safe + lam * (z_guess - z_safe)
        if fun.violation(z) <= FEAS_TOL:
            return z
    return None


def _descend(fun: RelayObjective, z0, scale, opts: SolverOptions):
    """Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking.

    Works in scaled coordinates; every accepted iterate is feasible on the
    dense grid and strictly decreases the augmented objective.
    """
    pr = fun.problem
    param = fun.param
    y = z0 / scale
    f, g = fun.value_and_grad(y * scale)
    g = g * scale
    history = [f]
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    converged = False
    small = 0
    it = 0
    for it in range(1, opts.max_iters + 1):
        accepted = False
        t = step
        for _ in range(60):
            y_new = _project(param, pr, (y - t * g) * scale) / scale
            d = y_new - y
            if not np.any(d):
                break
            z_new = y_new * scale
            if fun.violation(z_new) <= FEAS_TOL:
                f_new = fun.value(z_new)
                if f_new <= f + opts.armijo * (g @ d) and f_new < f:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            converged = True
            break
        f_new, g_new = fun.value_and_grad(y_new * scale)
        g_new = g_new * scale
        s, yy = y_new - y, g_new - g
        sy = s @ yy
        step = (s @ s) / sy if sy > 1e-300 else 2.0 * t
        decrease = f - f_new
        y, f, g = y_new, f_new, g_new
        history.append(f)
        small = small + 1 if decrease <= opts.tol_obj * max(1.0, abs(f)) else 0
        if small >= 3:
            converged = True
            break
    return y * scale, f, history, it, converged


def solve(problem: PlannerProblem, options: SolverOptions = SolverOptions()) -> PlannerSolution:
    """Optimize the relay trajectory.

    Starts from a straight-line guess plus ``restarts - 1`` randomly perturbed
    copies, keeps the best result (ties broken by shorter path), and returns it
    with per-sample SNR traces. A run that hits ``max_iters`` comes back with
    ``converged=False``.
    """
    p0, v0, a0 = problem.relay_initial
    if np.any(np.abs(v0) > problem.v_max) or np.any(np.abs(a0) > problem.a_max):
        raise InfeasibleInitialGuess("initial relay state violates the velocity/acceleration bounds")
    fun = RelayObjective(problem)
    param = fun.param

    if param.nz == 0:
        z = np.zeros(0)
        if fun.violation(z) > 1e-6:
            raise InfeasibleInitialGuess("fixed boundary trajectory violates the bounds")
        return _finish(problem, fun, z, [fun.value(z)], 0, True, [])

    z_safe = param.decision(param.base)
    guess = straight_line_guess(problem, param)
    scale = _scales(problem, param)
    rng = np.random.default_rng(options.seed)
    starts = []
    for r in range(max(1, options.restarts)):
        zg = guess if r == 0 else guess + options.perturbation * scale * rng.standard_normal(param.nz)
        zg = _project(param, problem, zg)
        zf = _make_feasible(fun, zg, z_safe)
        if zf is None:
            continue
        starts.append(zf)
    if not starts:
        raise InfeasibleInitialGuess("no feasible starting point found on the dense grid")

    runs = []
    for r, z0 in enumerate(starts):
        z, f, hist, iters, conv = _descend(fun, z0, scale, options)
        traj, _ = param.trajectory(z)
        runs.append({"z": z, "objective": f, "history": hist, "iterations": iters,
                     "converged": conv, "path_length": traj.path_length()})
        log.debug("restart %d: f=%.9g iters=%d converged=%s", r, f, iters, conv)
    best = min(runs, key=lambda r: (round(r["objective"], 9), r["path_length"]))
    summary = [{k: v for k, v in r.items() if k != "z"} for r in runs]
    return _finish(problem, fun, best["z"], best["history"], best["iterations"],
                   best["converged"], summary)


def _finish(problem, fun, z, history, iters, converged, restarts):
    traj, _ = fun.param.trajectory(z)
    snr10, snr21 = _link_snrs(problem, traj.pos, traj.rotmats)
    viol = max(0.0, float(max(np.max(np.abs(traj.vel)) - problem.v_max,
                              np.max(np.abs(traj.acc)) - problem.a_max)))
    return PlannerSolution(
        trajectory=traj,
        objective=objective(traj, problem),
        snr_relay_bs=snr10,
        snr_peer_relay=snr21,
        knots=fun.param.knots(z),
        iterations=iters,
        converged=converged,
        max_violation=viol,
        history=list(history),
        restarts=restarts,
        constraint_values=fun.constraint_values(z),
    )


def static_objective(problem: PlannerProblem, position) -> float:
    """Objective of a relay hovering at ``position`` for the whole horizon."""
    traj = Trajectory.hover(position, problem.T, problem.Ts, gravity=problem.gravity)
    return objective(traj, problem)
