"""Trajectory planning and tilt-aware control for a UAV communication relay."""
from .errors import *  # noqa: F401,F403
from .geometry import GRAVITY, Pose, attitude_from_acceleration
from .kinematics import AxisState, PrimitiveSegment, Trajectory, fit_boundary, sample_trajectory
from .channel import AntennaPattern, FadingModel, LinkParams, RelayLinks, end_to_end_rate
from .constraints import Constraint, ConstraintSet, penalty_value, slack_relax
from .planner import PlannerProblem, SolverOptions, solve
from .gtmr import GtmrParams, quadrotor, tilted_hexarotor
from .nmpc import NmpcController, NmpcProblem, nmpc_step, simulate_closed_loop

__version__ = "0.1.0"
