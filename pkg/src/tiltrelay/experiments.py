"""Plan / simulate / compare runs driven by a scenario config.

Each run writes plain CSV and JSON into an output directory together with a
manifest (config echo, tool version, seed). Nothing time- or host-dependent
is written, so a rerun with the same config and seed gives identical bytes.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import end_to_end_rate, expected_bits_from_snr, rate
from .geometry import attitude_from_acceleration
from .gtmr import make_state
from .kinematics import AxisState, Trajectory, fit_boundary, sample_trajectory
from .nmpc import ConstantReference, RunTrace, TrajectoryReference, simulate_closed_loop
from .planner import PlannerSolution, knot_trajectory, solve
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    mode: str
    summary: dict
    files: list = field(default_factory=list)
    converged: bool = True

    @property
    def exit_code(self) -> int:
        return 0 if self.converged else 1


def _clean(obj):
    """JSON-safe copy with numpy scalars and arrays turned into Python types."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, columns) -> None:
    rows = np.column_stack(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{x:.9g}" for x in row])


def _manifest(cfg: ScenarioConfig, mode: str, files) -> dict:
    return {"tool": "tiltrelay", "version": __version__, "mode": mode, "seed": cfg.seed,
            "files": sorted(files), "config": cfg.data}


def _outdir(cfg: ScenarioConfig, out_dir) -> Path:
    path = Path(cfg["experiment"]["output_dir"] if out_dir is None else out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- building blocks -------------------------------------------------------

def plan(cfg: ScenarioConfig) -> PlannerSolution:
    return solve(cfg.planner_problem(), cfg.solver_options())


def plan_on_grid(cfg: ScenarioConfig, sol: PlannerSolution, Ts: float) -> Trajectory:
    """The planned path re-sampled exactly on another grid."""
    return knot_trajectory(cfg.planner_problem(), sol.knots, Ts)[0]


def straight_reference(cfg: ScenarioConfig, Ts: float) -> Trajectory:
    """Naive reference: a straight, smooth move to the BS / final-peer midpoint.

    Only the planner's free axes move; the motion starts from the relay's
    initial state and ends at rest.
    """
    p0, v0, a0 = (np.asarray(x, dtype=float) for x in cfg.relay_initial())
    peer_end = cfg.peer_trajectory(cfg["planner"]["Ts"]).pos[-1]
    target = p0.copy()
    axes = list(cfg["planner"]["free_axes"])
    target[axes] = 0.5 * (cfg.bs_pose().position + peer_end)[axes]
    chains = [[fit_boundary(AxisState(p0[j], v0[j], a0[j]), AxisState(target[j], 0.0, 0.0), cfg.T)]
              for j in range(3)]
    return sample_trajectory(chains, Ts, gravity=cfg.gravity)


def open_loop_accounting(cfg: ScenarioConfig, traj: Trajectory):
    """SNRs, end-to-end rate and cumulative bits of a kinematic trajectory.

    Cumulative bits use ``Ts * cumsum(rate)``, the same rule as the
    closed-loop traces, so curves on a shared grid are directly comparable.
    """
    peer = cfg.peer_trajectory(traj.Ts)
    bs = cfg.bs_pose()
    snr1, snr2 = cfg.links().snrs(traj.pos, traj.rotmats, peer.pos, peer.rotmats, bs.position)
    r = end_to_end_rate(snr1, snr2)
    return snr1, snr2, r, traj.Ts * np.cumsum(r)


def initial_state(cfg: ScenarioConfig, params) -> np.ndarray:
    p0, v0, a0 = cfg.relay_initial()
    q = attitude_from_acceleration(np.asarray(a0), cfg.gravity, 0.0)
    return make_state(p=p0, q=q, v=v0, Omega=params.hover_speeds())


def track(cfg: ScenarioConfig, reference: Trajectory | None) -> RunTrace:
    """Closed-loop NMPC run following ``reference`` (hold the start when None)."""
    pr = cfg.nmpc_problem()
    x0 = initial_state(cfg, pr.params)
    if reference is None:
        ref = ConstantReference(np.r_[x0[:3], 0.0, np.zeros(3)][:pr.ny])
    else:
        ref = TrajectoryReference(reference, pr.selector)
    peer = cfg.peer_trajectory(pr.Ts)
    return simulate_closed_loop(pr, x0, cfg.plant_params(), cfg.T, ref, peer, cfg.bs_pose(), cfg.links())


def _track_job(args):
    cfg, reference = args
    return track(cfg, reference)


# --- runs ------------------------------------------------------------------

def _plan_summary(cfg: ScenarioConfig, sol: PlannerSolution) -> dict:
    traj = sol.trajectory
    snr1, snr2 = sol.snr_relay_bs, sol.snr_peer_relay
    r = end_to_end_rate(snr1, snr2)
    fading = cfg.fading()
    n_mc = cfg["channel"]["fading"]["n_mc"]
    problem = cfg.planner_problem()
    cons = {}
    hard_ok = True
    for c in problem.constraints:
        g = sol.constraint_values[c.id]
        cons[c.id] = {"kind": c.kind, "g": g, "satisfied": g <= 0}
        if c.kind == "hard" and g > 0:
            hard_ok = False
    return {
        "total_bits": float(np.trapezoid(r, traj.t)),
        "expected_bits": expected_bits_from_snr(traj.t, snr1, snr2, fading, n_mc, cfg.seed),
        "min_link_snr": float(np.min(np.minimum(snr1, snr2))),
        "min_snr_relay_bs": float(np.min(snr1)),
        "min_snr_peer_relay": float(np.min(snr2)),
        "final_position": traj.pos[-1],
        "max_speed": float(np.max(np.abs(traj.vel))),
        "max_accel": float(np.max(np.abs(traj.acc))),
        "solver": {k: v for k, v in sol.diagnostics.items() if k != "constraints"},
        "constraints": cons,
        "hard_constraints_met": hard_ok,
    }


def _write_plan(out: Path, sol: PlannerSolution, prefix: str = "") -> list:
    traj = sol.trajectory
    r = end_to_end_rate(sol.snr_relay_bs, sol.snr_peer_relay)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * traj.Ts * (r[1:] + r[:-1]))])
    files = [f"{prefix}trajectory.csv", f"{prefix}links.csv", f"{prefix}history.csv"]
    traj.to_csv(out / files[0])
    write_csv(out / files[1], ["t", "snr_relay_bs", "snr_peer_relay", "rate_e2e", "cum_bits"],
              [traj.t, sol.snr_relay_bs, sol.snr_peer_relay, r, cum])
    write_csv(out / files[2], ["iteration", "objective"],
              [np.arange(len(sol.history)), np.asarray(sol.history)])
    return files


def run_plan(cfg: ScenarioConfig, out_dir=None) -> RunResult:
    """Optimize the relay path and export trajectory, link traces and summary."""
    out = _outdir(cfg, out_dir)
    sol = plan(cfg)
    summary = _plan_summary(cfg, sol)
    summary["mode"] = "plan"
    files = _write_plan(out, sol)
    files += ["summary.json", "manifest.json"]
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", _manifest(cfg, "plan", files))
    ok = sol.converged and summary["hard_constraints_met"]
    return RunResult("plan", summary, files, ok)


def _reference(cfg: ScenarioConfig, kind: str, sol: PlannerSolution | None):
    Ts = cfg["nmpc"]["Ts"]
    if kind == "plan":
        return plan_on_grid(cfg, sol, Ts)
    if kind == "straight":
        return straight_reference(cfg, Ts)
    return None


def run_simulate(cfg: ScenarioConfig, out_dir=None) -> RunResult:
    """Closed-loop NMPC run tracking the reference chosen by ``nmpc.reference``."""
    out = _outdir(cfg, out_dir)
    kind = cfg["nmpc"]["reference"]
    files = []
    sol = None
    converged = True
    if kind == "plan":
        sol = plan(cfg)
        converged = sol.converged
        files += _write_plan(out, sol, prefix="plan_")
    trace = track(cfg, _reference(cfg, kind, sol))
    trace.to_csv(out / "trace.csv")
    trace.diagnostics_json(out / "nmpc_diagnostics.json")
    summary = {"mode": "simulate", "reference": kind, "nmpc": trace.summary(),
               "max_rotor_speed": float(np.max(trace.states[:, 13:])),
               "min_rotor_speed": float(np.min(trace.states[:, 13:]))}
    if sol is not None:
        summary["planner"] = sol.diagnostics
    files += ["trace.csv", "nmpc_diagnostics.json", "summary.json", "manifest.json"]
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", _manifest(cfg, "simulate", files))
    return RunResult("simulate", summary, files, converged)


@dataclass
class Comparison:
    t: np.ndarray
    rates: dict
    bits: dict

    def normalized(self):
        """Rates scaled by the largest rate, bits by the largest total."""
        rmax = max(float(np.max(r)) for r in self.rates.values())
        bmax = max(float(b[-1]) for b in self.bits.values())
        rmax = rmax if rmax > 0 else 1.0
        bmax = bmax if bmax > 0 else 1.0
        return ({k: v / rmax for k, v in self.rates.items()},
                {k: v / bmax for k, v in self.bits.items()})


def compare(cfg: ScenarioConfig, workers: int = 2):
    """Plan, then track the plan and a straight-line baseline with NMPC.

    Returns ``(solution, comparison, traces)``. The two closed-loop runs are
    independent and run in separate processes when ``workers > 1``.
    """
    sol = plan(cfg)
    Ts = cfg["nmpc"]["Ts"]
    planned = plan_on_grid(cfg, sol, Ts)
    jobs = [(cfg, planned), (cfg, straight_reference(cfg, Ts))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            traces = list(pool.map(_track_job, jobs))
    else:
        traces = [_track_job(j) for j in jobs]
    _, _, r_plan, b_plan = open_loop_accounting(cfg, planned)
    comp = Comparison(
        t=planned.t,
        rates={"plan": r_plan, "nmpc": traces[0].rate_e2e, "baseline": traces[1].rate_e2e},
        bits={"plan": b_plan, "nmpc": traces[0].cum_bits, "baseline": traces[1].cum_bits})
    return sol, comp, {"nmpc": traces[0], "baseline": traces[1]}, {"plan": planned, "baseline": jobs[1][1]}


def run_compare(cfg: ScenarioConfig, out_dir=None, workers: int = 2) -> RunResult:
    """Compare the open-loop plan, NMPC tracking the plan and NMPC tracking the baseline."""
    out = _outdir(cfg, out_dir)
    sol, comp, traces, refs = compare(cfg, workers)
    rn, bn = comp.normalized()
    names = ("plan", "nmpc", "baseline")
    write_csv(out / "compare.csv",
              ["t"] + [f"rate_{k}" for k in names] + [f"bits_{k}" for k in names],
              [comp.t] + [rn[k] for k in names] + [bn[k] for k in names])
    refs["plan"].to_csv(out / "plan_trajectory.csv")
    refs["baseline"].to_csv(out / "baseline_trajectory.csv")
    traces["nmpc"].to_csv(out / "trace_nmpc.csv")
    traces["baseline"].to_csv(out / "trace_baseline.csv")
    bits = {k: float(comp.bits[k][-1]) for k in names}
    summary = {
        "mode": "compare",
        "bits": bits,
        "nmpc_over_plan": bits["nmpc"] / bits["plan"] if bits["plan"] > 0 else None,
        "nmpc_over_baseline": bits["nmpc"] / bits["baseline"] if bits["baseline"] > 0 else None,
        "planner": sol.diagnostics,
        "nmpc": traces["nmpc"].summary(),
        "baseline": traces["baseline"].summary(),
    }
    files = ["compare.csv", "plan_trajectory.csv", "baseline_trajectory.csv", "trace_nmpc.csv",
             "trace_baseline.csv", "summary.json", "manifest.json"]
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", _manifest(cfg, "compare", files))
    return RunResult("compare", summary, files, sol.converged)


RUNNERS = {"plan": run_plan, "simulate": run_simulate, "compare": run_compare}
