import numpy as np
import pytest

from tiltrelay.channel import AntennaPattern, LinkParams, RelayLinks
from tiltrelay.geometry import Pose
from tiltrelay.kinematics import Trajectory
from tiltrelay.planner import PlannerProblem

# criterion number -> (passed, description); filled by test_acceptance.py
ACCEPTANCE = {}


def record(num: int, name: str, passed: bool, detail: str = "") -> None:
    line = f"AC{num:<2d} {'PASS' if passed else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE[num] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])


def line_problem(d_b=1.0, x0=20.0, T=40.0, Ts=0.5, M=6, noise=1e-4):
    """1-D relay between a BS at x=0 and a hovering peer at x=100, isotropic antennas."""
    peer = Trajectory.hover([100.0, 0.0, 10.0], T, Ts)
    iso = AntennaPattern.isotropic()
    links = RelayLinks(iso, iso, iso,
                       LinkParams(tx_power_w=1.0, noise_w=noise, k0=1.0, d_b=d_b),
                       LinkParams(tx_power_w=1.0, noise_w=noise, k0=1.0))
    return PlannerProblem(Pose([0.0, 0.0, 10.0]), peer, ([x0, 0.0, 10.0], [0, 0, 0], [0, 0, 0]),
                          links, v_max=5.0, a_max=3.0, T=T, Ts=Ts, M=M, free_axes=(0,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
