from importlib import resources

import numpy as np
import pytest
import yaml

from tiltrelay.errors import ParseError, ValidationError
from tiltrelay.scenario import DEFAULTS, load_scenario, parse_scenario, sample_counts


def problems(text):
    with pytest.raises(ValidationError) as err:
        parse_scenario(text)
    return err.value.problems


def test_empty_config_gets_every_default():
    cfg = parse_scenario("")
    echoed = yaml.safe_load(cfg.echo())
    assert set(echoed) == set(DEFAULTS)
    assert echoed["planner"]["T"] == 20.0
    assert echoed["channel"]["fading"]["kind"] == "none"
    # echo is a fixed point
    assert parse_scenario(cfg.echo()).echo() == cfg.echo()


def test_numeric_strings_are_coerced():
    cfg = parse_scenario("channel:\n  noise_w: 1e-4\n")
    assert cfg["channel"]["noise_w"] == 1e-4


def test_all_problems_reported_at_once():
    probs = problems("channel:\n  noise_w: -1.0\nplanner:\n  T: 10.0\n  Ts: 0.3\n")
    assert "channel.noise_w: must be > 0.0, got -1.0" in probs
    assert "planner.Ts: must divide planner.T = 10.0" in probs


@pytest.mark.parametrize("text,needle", [
    ("relay:\n  colour: red\n", "relay.colour: unknown key"),
    ("bogus: 1\n", "bogus: unknown key"),
    ("relay:\n  position: [1, 2]\n", "relay.position"),
    ("planner:\n  M: 1\n", "planner.M"),
    ("planner:\n  free_axes: [0, 0]\n", "planner.free_axes"),
    ("nmpc:\n  selector: attitude\n", "nmpc.selector"),
    ("nmpc:\n  g_min: 1.5\n", "nmpc.g_min"),
    ("channel:\n  fading:\n    kind: rician\n", "channel.fading.kind"),
    ("channel:\n  d_b: 0.5\n", "channel.d_b"),
    ("constraints:\n  - {id: a, params: {type: min_bits}}\n", "constraints[0].params.bits: missing"),
    ("constraints:\n  - {id: a, params: {type: max_fun}}\n", "constraints[0].params.type"),
    ("constraints:\n  - {id: a, params: {type: min_snr, gamma0: 2}}\n"
     "  - {id: a, params: {type: min_snr, gamma0: 3}}\n", "duplicate id"),
    ("uav2:\n  waypoints:\n    - {t: 1.0, position: [0, 0, 0]}\n", "first waypoint"),
    ("experiment:\n  mode: fly\n", "experiment.mode"),
])
def test_validation_messages(text, needle):
    assert any(needle in p for p in problems(text))


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as err:
        parse_scenario("planner:\n  T: [1, 2\n", "bad.yaml")
    assert "bad.yaml" in str(err.value) and "line" in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "nope.yaml")


def test_overrides():
    cfg = parse_scenario("").with_overrides(seed=5, output_dir="x")
    assert cfg.seed == 5 and cfg["experiment"]["output_dir"] == "x"


def test_waypoint_peer_passes_through_waypoints():
    cfg = parse_scenario("""
planner: {T: 10.0, Ts: 0.5}
uav2:
  waypoints:
    - {t: 0.0, position: [50, 0, 10], velocity: [1, 0, 0]}
    - {t: 6.0, position: [56, 2, 10], velocity: [1, 0, 0]}
""")
    peer = cfg.peer_trajectory(0.5)
    assert peer.n_samples == 21
    np.testing.assert_allclose(peer.pos[0], [50, 0, 10])
    np.testing.assert_allclose(peer.pos[12], [56, 2, 10], atol=1e-12)
    np.testing.assert_allclose(peer.pos[-1], [56, 2, 10], atol=1e-12)


@pytest.mark.parametrize("name", ["demo.yaml", "hover.yaml"])
def test_bundled_scenarios_load(name):
    path = resources.files("tiltrelay") / "scenarios" / name
    cfg = load_scenario(path)
    counts = sample_counts(cfg)
    assert counts["planner"] >= 2 and counts["nmpc"] >= 2
    cfg.nmpc_problem()
    cfg.planner_problem()
