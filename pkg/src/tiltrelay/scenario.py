"""Scenario configuration: a strict YAML schema with defaults.

Every field has a default, so a minimal file only lists what differs. Unknown
keys are rejected and every violated rule is reported at once.

Units: positions [m], velocities [m/s], accelerations [m/s^2], times [s],
powers [W], rotor speeds [rad/s], rotor accelerations [rad/s^2], gains and
SNRs are linear (not dB) except ``fading.sigma_db``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .channel import AntennaPattern, FadingModel, LinkParams, RelayLinks
from .constraints import Constraint, ConstraintSet
from .errors import ParseError, ValidationError
from .geometry import Pose
from .gtmr import PRESETS, SELECTORS, AlignmentParams
from .kinematics import AxisState, Trajectory, fit_boundary, sample_count, sample_trajectory
from .nmpc import NmpcProblem
from .planner import COMM_CONSTRAINT_TYPES, PlannerProblem, SolverOptions

DEFAULTS = {
    "world": {"gravity": 9.81, "frame": "ENU"},
    "bs": {"position": [0.0, 0.0, 10.0]},
    "uav2": {"hover": [100.0, 0.0, 10.0], "waypoints": None},
    "relay": {
        "position": [20.0, 0.0, 10.0],
        "velocity": [0.0, 0.0, 0.0],
        "acceleration": [0.0, 0.0, 0.0],
        "v_max": 5.0,
        "a_max": 3.0,
        "preset": "quadrotor",
        "mass_scale": 1.0,
    },
    "channel": {
        "tx_power_w": 1.0,
        "noise_w": 1e-4,          # BS receiver noise power
        "noise_relay_w": None,    # relay receiver noise; None -> noise_w
        "k0": 1.0,
        "d_b": 1.0,
        "dipole": True,
        "fading": {"kind": "none", "sigma_db": 0.0, "seed": 0, "n_mc": 1000},
    },
    "planner": {
        "T": 20.0,
        "Ts": 0.1,
        "M": 5,
        "p": 8.0,
        "free_axes": [0, 1, 2],
        "solver": {"max_iters": 1000, "tol_obj": 1e-8, "restarts": 4, "perturbation": 0.2},
    },
    "nmpc": {
        "N": 20,
        "Ts": 0.05,
        "Q": [10.0, 10.0, 10.0, 1.0],
        "R_u": 1e-7,
        "selector": "default",
        "omega_min": 100.0,
        "omega_max": 900.0,
        "rate_min": -5000.0,
        "rate_max": 5000.0,
        "g_min": None,            # None disables the alignment penalty
        "mu1": 50.0,
        "mu2": 50.0,
        "max_iters": 8,
        "reference": "plan",      # plan | straight | hover
    },
    "constraints": [],
    "experiment": {"mode": "compare", "seed": 0, "output_dir": "out"},
}

_CONSTRAINT_DEFAULTS = {"id": None, "kind": "penalty", "mu1": None, "mu2": None, "ks": None,
                        "params": {}}
_FADING_KINDS = ("none", "rayleigh", "log_normal_shadowing")
_MODES = ("plan", "simulate", "compare")
_REFERENCES = ("plan", "straight", "hover")


class _Checker:
    """Collects problems instead of raising on the first."""

    def __init__(self):
        self.problems: list[str] = []

    def fail(self, path, msg):
        self.problems.append(f"{path}: {msg}")

    def number(self, d, key, path, lo=None, hi=None, strict_lo=False, integer=False, optional=False):
        val = d[key]
        if val is None and optional:
            return
        if isinstance(val, str):
            # yaml 1.1 reads "1e-4" as a string
            try:
                val = float(val)
            except ValueError:
                pass
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(f"{path}.{key}", f"expected a number, got {d[key]!r}")
            return
        if integer:
            if float(val) != int(val):
                self.fail(f"{path}.{key}", f"expected an integer, got {val!r}")
                return
            val = int(val)
        else:
            val = float(val)
        if not math.isfinite(val):
            self.fail(f"{path}.{key}", "must be finite")
            return
        if lo is not None and (val <= lo if strict_lo else val < lo):
            self.fail(f"{path}.{key}", f"must be {'>' if strict_lo else '>='} {lo}, got {val}")
        if hi is not None and val > hi:
            self.fail(f"{path}.{key}", f"must be <= {hi}, got {val}")
        d[key] = val

    def vector(self, d, key, path, n=3, optional=False):
        val = d[key]
        if val is None and optional:
            return
        if not isinstance(val, (list, tuple)) or len(val) != n:
            self.fail(f"{path}.{key}", f"expected a list of {n} numbers, got {val!r}")
            return
        out = []
        for i, x in enumerate(val):
            try:
                if isinstance(x, bool):
                    raise TypeError
                out.append(float(x))
            except (TypeError, ValueError):
                self.fail(f"{path}.{key}[{i}]", f"expected a number, got {x!r}")
                return
        d[key] = out

    def choice(self, d, key, path, options):
        if d[key] not in options:
            self.fail(f"{path}.{key}", f"must be one of {list(options)}, got {d[key]!r}")


def _merge(defaults, given, path, chk: _Checker):
    """Overlay ``given`` on ``defaults``, flagging unknown keys."""
    if not isinstance(given, dict):
        chk.fail(path or "<root>", f"expected a mapping, got {type(given).__name__}")
        return copy.deepcopy(defaults)
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            chk.fail(sub, "unknown key")
        elif isinstance(defaults[key], dict) and defaults[key] and val is not None:
            out[key] = _merge(defaults[key], val, sub, chk)
        else:
            out[key] = val
    return out


def _divides(T, Ts):
    q = T / Ts
    return abs(q - round(q)) <= 1e-9 * max(1.0, q)


def _validate(data: dict, chk: _Checker) -> None:
    chk.number(data["world"], "gravity", "world", lo=0.0, strict_lo=True)
    chk.choice(data["world"], "frame", "world", ("ENU",))
    chk.vector(data["bs"], "position", "bs")

    u2 = data["uav2"]
    if u2["waypoints"] is not None:
        u2["hover"] = None
        wps = u2["waypoints"]
        if not isinstance(wps, list) or not wps:
            chk.fail("uav2.waypoints", "expected a non-empty list")
        else:
            last_t = None
            for i, wp in enumerate(wps):
                path = f"uav2.waypoints[{i}]"
                if not isinstance(wp, dict):
                    chk.fail(path, "expected a mapping with t, position[, velocity]")
                    continue
                wp = _merge({"t": None, "position": None, "velocity": [0.0, 0.0, 0.0]}, wp, path, chk)
                wps[i] = wp
                chk.number(wp, "t", path, lo=0.0)
                chk.vector(wp, "position", path)
                chk.vector(wp, "velocity", path)
                t = wp["t"]
                if isinstance(t, float):
                    if i == 0 and t != 0.0:
                        chk.fail(f"{path}.t", "first waypoint must be at t = 0")
                    if last_t is not None and t <= last_t:
                        chk.fail(f"{path}.t", "waypoint times must increase")
                    last_t = t
    else:
        chk.vector(u2, "hover", "uav2")

    r = data["relay"]
    for key in ("position", "velocity", "acceleration"):
        chk.vector(r, key, "relay")
    chk.number(r, "v_max", "relay", lo=0.0, strict_lo=True)
    chk.number(r, "a_max", "relay", lo=0.0, strict_lo=True)
    chk.number(r, "mass_scale", "relay", lo=0.0, strict_lo=True)
    chk.choice(r, "preset", "relay", tuple(PRESETS))

    c = data["channel"]
    for key in ("tx_power_w", "noise_w", "k0"):
        chk.number(c, key, "channel", lo=0.0, strict_lo=True)
    chk.number(c, "noise_relay_w", "channel", lo=0.0, strict_lo=True, optional=True)
    chk.number(c, "d_b", "channel", lo=1.0)
    if not isinstance(c["dipole"], bool):
        chk.fail("channel.dipole", f"expected true/false, got {c['dipole']!r}")
    f = c["fading"]
    chk.choice(f, "kind", "channel.fading", _FADING_KINDS)
    chk.number(f, "sigma_db", "channel.fading", lo=0.0)
    chk.number(f, "seed", "channel.fading", lo=0, integer=True)
    chk.number(f, "n_mc", "channel.fading", lo=1, integer=True)

    p = data["planner"]
    chk.number(p, "T", "planner", lo=0.0, strict_lo=True)
    chk.number(p, "Ts", "planner", lo=0.0, strict_lo=True)
    chk.number(p, "M", "planner", lo=2, integer=True)
    chk.number(p, "p", "planner", lo=1.0)
    axes = p["free_axes"]
    if (not isinstance(axes, list) or any(a not in (0, 1, 2) or isinstance(a, bool) for a in axes)
            or len(set(axes)) != len(axes)):
        chk.fail("planner.free_axes", f"expected distinct axis indices from 0, 1, 2, got {axes!r}")
    s = p["solver"]
    chk.number(s, "max_iters", "planner.solver", lo=1, integer=True)
    chk.number(s, "tol_obj", "planner.solver", lo=0.0, strict_lo=True)
    chk.number(s, "restarts", "planner.solver", lo=1, integer=True)
    chk.number(s, "perturbation", "planner.solver", lo=0.0)
    if isinstance(p["T"], float) and isinstance(p["Ts"], float) and p["Ts"] > 0:
        if not _divides(p["T"], p["Ts"]):
            chk.fail("planner.Ts", f"must divide planner.T = {p['T']}")

    n = data["nmpc"]
    chk.number(n, "N", "nmpc", lo=1, integer=True)
    chk.number(n, "Ts", "nmpc", lo=0.0, strict_lo=True)
    chk.number(n, "R_u", "nmpc", lo=0.0)
    for key in ("omega_min", "omega_max", "rate_min", "rate_max", "mu1", "mu2"):
        chk.number(n, key, "nmpc")
    chk.number(n, "g_min", "nmpc", lo=0.0, hi=1.0, optional=True)
    chk.number(n, "max_iters", "nmpc", lo=1, integer=True)
    chk.choice(n, "selector", "nmpc", tuple(SELECTORS))
    chk.choice(n, "reference", "nmpc", _REFERENCES)
    ny = SELECTORS.get(n["selector"])
    if ny is not None:
        chk.vector(n, "Q", "nmpc", n=ny)
        if isinstance(n["Q"], list) and any(q < 0 for q in n["Q"]):
            chk.fail("nmpc.Q", "weights must be non-negative")
    if all(isinstance(n[k], float) for k in ("omega_min", "omega_max")) and not 0 <= n["omega_min"] < n["omega_max"]:
        chk.fail("nmpc.omega_min", "need 0 <= omega_min < omega_max")
    if all(isinstance(n[k], float) for k in ("rate_min", "rate_max")) and not n["rate_min"] < 0 < n["rate_max"]:
        chk.fail("nmpc.rate_min", "need rate_min < 0 < rate_max")
    for key in ("mu1", "mu2"):
        if isinstance(n[key], float) and n[key] <= 0:
            chk.fail(f"nmpc.{key}", "must be > 0")
    if isinstance(p["T"], float) and isinstance(n["Ts"], float) and n["Ts"] > 0:
        if not _divides(p["T"], n["Ts"]):
            chk.fail("nmpc.Ts", f"must divide planner.T = {p['T']}")

    cons = data["constraints"]
    if not isinstance(cons, list):
        chk.fail("constraints", "expected a list")
    else:
        seen = set()
        for i, entry in enumerate(cons):
            path = f"constraints[{i}]"
            entry = _merge(_CONSTRAINT_DEFAULTS, entry, path, chk)
            cons[i] = entry
            if not isinstance(entry["id"], str) or not entry["id"]:
                chk.fail(f"{path}.id", "expected a non-empty string")
            elif entry["id"] in seen:
                chk.fail(f"{path}.id", f"duplicate id {entry['id']!r}")
            seen.add(entry["id"])
            chk.choice(entry, "kind", path, ("hard", "penalty", "slack"))
            for key in ("mu1", "mu2"):
                chk.number(entry, key, path, lo=0.0, strict_lo=True, optional=True)
            chk.number(entry, "ks", path, lo=0.0, optional=True)
            prm = entry["params"]
            if not isinstance(prm, dict):
                chk.fail(f"{path}.params", "expected a mapping")
                continue
            kind = prm.get("type")
            if kind not in COMM_CONSTRAINT_TYPES:
                chk.fail(f"{path}.params.type", f"must be one of {list(COMM_CONSTRAINT_TYPES)}, got {kind!r}")
                continue
            need = "bits" if kind == "min_bits" else "gamma0"
            extra = set(prm) - {"type", need}
            if extra:
                chk.fail(f"{path}.params", f"unknown keys {sorted(extra)}")
            if need not in prm:
                chk.fail(f"{path}.params.{need}", "missing")
            else:
                chk.number(prm, need, f"{path}.params", lo=0.0, strict_lo=True)

    e = data["experiment"]
    chk.choice(e, "mode", "experiment", _MODES)
    chk.number(e, "seed", "experiment", lo=0, integer=True)
    if not isinstance(e["output_dir"], str) or not e["output_dir"]:
        chk.fail("experiment.output_dir", "expected a non-empty path string")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A validated, fully defaulted scenario. Build the model objects from it."""

    data: dict
    source: str | None = None

    def echo(self) -> str:
        """Fully defaulted config as YAML (stable key order)."""
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def with_overrides(self, seed=None, output_dir=None) -> "ScenarioConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["experiment"]["seed"] = int(seed)
        if output_dir is not None:
            data["experiment"]["output_dir"] = str(output_dir)
        return ScenarioConfig(data, self.source)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["experiment"]["seed"]

    @property
    def gravity(self) -> float:
        return self.data["world"]["gravity"]

    @property
    def T(self) -> float:
        return self.data["planner"]["T"]

    def bs_pose(self) -> Pose:
        return Pose(np.array(self.data["bs"]["position"]))

    def links(self) -> RelayLinks:
        c = self.data["channel"]
        ant = AntennaPattern.dipole() if c["dipole"] else AntennaPattern.isotropic()
        relay_noise = c["noise_w"] if c["noise_relay_w"] is None else c["noise_relay_w"]
        return RelayLinks(
            relay_antenna=ant, peer_antenna=ant, bs_antenna=AntennaPattern.isotropic(),
            relay_to_bs=LinkParams(c["tx_power_w"], c["noise_w"], c["k0"], c["d_b"]),
            peer_to_relay=LinkParams(c["tx_power_w"], relay_noise, c["k0"], 1.0))

    def fading(self) -> FadingModel:
        f = self.data["channel"]["fading"]
        return FadingModel(f["kind"], f["sigma_db"], f["seed"])

    def peer_trajectory(self, Ts: float) -> Trajectory:
        """UAV-2 path on the grid ``k*Ts`` over the planning horizon.

        Waypoints are joined by quintic primitives with zero acceleration at
        each waypoint; the last waypoint is held until the horizon ends.
        """
        u2 = self.data["uav2"]
        T = self.T
        if u2["waypoints"] is None:
            return Trajectory.hover(u2["hover"], T, Ts, gravity=self.gravity)
        wps = list(u2["waypoints"])
        if wps[-1]["t"] < T:
            wps.append({"t": T, "position": wps[-1]["position"], "velocity": [0.0, 0.0, 0.0]})
            if any(wps[-2]["velocity"]):
                # coast to a stop is not defined; hold position with zero velocity
                wps[-2] = dict(wps[-2], velocity=[0.0, 0.0, 0.0])
        chains = [[], [], []]
        for a, b in zip(wps[:-1], wps[1:]):
            if a["t"] >= T:
                break
            dt = min(b["t"], T) - a["t"]
            for j in range(3):
                chains[j].append(fit_boundary(AxisState(a["position"][j], a["velocity"][j], 0.0),
                                              AxisState(b["position"][j], b["velocity"][j], 0.0), dt))
        return sample_trajectory(chains, Ts, gravity=self.gravity)

    def relay_initial(self):
        r = self.data["relay"]
        return (r["position"], r["velocity"], r["acceleration"])

    def constraint_set(self) -> ConstraintSet:
        out = []
        for c in self.data["constraints"]:
            out.append(Constraint(c["id"], c["kind"], mu1=c["mu1"], mu2=c["mu2"], ks=c["ks"],
                                  params=dict(c["params"])))
        return ConstraintSet(out)

    def planner_problem(self) -> PlannerProblem:
        p = self.data["planner"]
        r = self.data["relay"]
        return PlannerProblem(
            bs=self.bs_pose(), peer=self.peer_trajectory(p["Ts"]), relay_initial=self.relay_initial(),
            links=self.links(), v_max=r["v_max"], a_max=r["a_max"], T=p["T"], Ts=p["Ts"], M=p["M"],
            p=p["p"], free_axes=tuple(p["free_axes"]), gravity=self.gravity,
            constraints=self.constraint_set())

    def solver_options(self, seed=None) -> SolverOptions:
        s = self.data["planner"]["solver"]
        return SolverOptions(max_iters=s["max_iters"], tol_obj=s["tol_obj"], restarts=s["restarts"],
                             seed=self.seed if seed is None else seed, perturbation=s["perturbation"])

    def model_params(self):
        return PRESETS[self.data["relay"]["preset"]](gravity=self.gravity)

    def plant_params(self):
        return self.model_params().with_mass_scale(self.data["relay"]["mass_scale"])

    def nmpc_problem(self) -> NmpcProblem:
        n = self.data["nmpc"]
        align = None
        if n["g_min"] is not None:
            ant = AntennaPattern.dipole() if self.data["channel"]["dipole"] else AntennaPattern.isotropic()
            align = AlignmentParams(g_min=n["g_min"], mu1=n["mu1"], mu2=n["mu2"], antenna=ant)
        return NmpcProblem(self.model_params(), N=n["N"], Ts=n["Ts"], Q=np.diag(n["Q"]), R_u=n["R_u"],
                           selector=n["selector"], omega_min=n["omega_min"], omega_max=n["omega_max"],
                           rate_min=n["rate_min"], rate_max=n["rate_max"], alignment=align,
                           max_iters=n["max_iters"])


def _build(raw, source=None) -> ScenarioConfig:
    chk = _Checker()
    if raw is None:
        raw = {}
    data = _merge(DEFAULTS, raw, "", chk)
    # validate even after merge problems so every violation is reported
    _validate(data, chk)
    if chk.problems:
        raise ValidationError(chk.problems)
    try:
        cfg = ScenarioConfig(data, source)
        cfg.planner_problem()
        cfg.nmpc_problem()
    except ValueError as exc:
        raise ValidationError([f"<model>: {exc}"]) from exc
    return cfg


def parse_scenario(text: str, source=None) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ParseError(f"{source or '<string>'}: {where}: {getattr(exc, 'problem', exc)}") from exc
    return _build(raw, source)


def load_scenario(path) -> ScenarioConfig:
    """Read, default and validate a YAML scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file ({exc.strerror})") from exc
    return parse_scenario(text, str(path))


def sample_counts(cfg: ScenarioConfig) -> dict:
    return {"planner": sample_count(cfg.T, cfg["planner"]["Ts"]),
            "nmpc": sample_count(cfg.T, cfg["nmpc"]["Ts"])}
