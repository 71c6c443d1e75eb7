import json
from importlib import resources

import numpy as np
import pytest
import yaml

from tiltrelay.cli import main

HOVER = str(resources.files("tiltrelay") / "scenarios" / "hover.yaml")

LINE = """
bs: {position: [0.0, 0.0, 10.0]}
uav2: {hover: [100.0, 0.0, 10.0]}
relay: {position: [20.0, 0.0, 10.0]}
channel: {dipole: false}
planner:
  T: 40.0
  Ts: 0.5
  M: 6
  free_axes: [0]
  solver: {restarts: 2}
experiment: {mode: plan}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_validate_echoes_defaults(tmp_path, capsys):
    assert main(["validate", write(tmp_path, "relay: {v_max: 4.0}\n")]) == 0
    echoed = yaml.safe_load(capsys.readouterr().out)
    assert echoed["relay"]["v_max"] == 4.0
    assert echoed["nmpc"]["N"] == 20


def test_invalid_config_exit_2_with_report(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write(tmp_path, "channel: {noise_w: -1.0}\n")
    assert main(["plan", cfg, "--out-dir", str(out)]) == 2
    report = json.loads(capsys.readouterr().err)
    assert report["error"] == "ValidationError"
    assert "channel.noise_w: must be > 0.0, got -1.0" in report["problems"]
    assert json.loads((out / "error.json").read_text()) == report


def test_parse_error_exit_2(tmp_path, capsys):
    assert main(["validate", write(tmp_path, "a: [1\n")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ParseError"
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 2


def test_infeasible_initial_state_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, LINE.replace("relay: {position: [20.0, 0.0, 10.0]}",
                                       "relay: {position: [20.0, 0.0, 10.0], velocity: [6.0, 0, 0]}"))
    assert main(["plan", cfg, "--out-dir", str(tmp_path / "o"), "--quiet"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "InfeasibleInitialGuess"


def test_violated_hard_constraint_exit_1(tmp_path):
    text = open(HOVER).read() + "constraints:\n  - {id: snr, kind: hard, params: {type: min_snr, gamma0: 1.0e6}}\n"
    out = tmp_path / "o"
    assert main(["plan", write(tmp_path, text), "--out-dir", str(out), "--quiet"]) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["hard_constraints_met"] is False
    assert summary["constraints"]["snr"]["satisfied"] is False


def test_compare_is_byte_identical_across_runs(tmp_path):
    a = tmp_path / "a"
    assert main(["compare", HOVER, "--out-dir", str(a), "--quiet", "--workers", "1"]) == 0
    first = {p.name: p.read_bytes() for p in a.iterdir()}
    assert main(["compare", HOVER, "--out-dir", str(a), "--quiet", "--workers", "2"]) == 0
    second = {p.name: p.read_bytes() for p in a.iterdir()}
    assert "compare.csv" in first and "manifest.json" in first
    assert first == second
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["mode"] == "compare"
    # everything holds station, so the three curves coincide
    data = np.genfromtxt(a / "compare.csv", delimiter=",", names=True)
    np.testing.assert_allclose(data["bits_plan"], data["bits_nmpc"], rtol=1e-6)
    np.testing.assert_allclose(data["bits_baseline"], data["bits_nmpc"], rtol=1e-6)


def test_plan_symmetric_line_loiters_at_midpoint(tmp_path):
    out = tmp_path / "o"
    assert main(["plan", write(tmp_path, LINE), "--out-dir", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["final_position"][0] - 50.0) <= 1.0
    traj = np.genfromtxt(out / "trajectory.csv", delimiter=",", names=True)
    assert traj.size == 81


def test_simulate_hover(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", HOVER, "--out-dir", str(out), "--quiet", "--seed", "3"]) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["nmpc"]["fallbacks"] == 0


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit) as err:
        main(["fly", HOVER])
    assert err.value.code == 2
