import numpy as np
import pytest

from tiltrelay.errors import UnknownSelector
from tiltrelay.geometry import quat_from_axis_angle, quat_to_rotmat
from tiltrelay.gtmr import (OMEGA0, AlignmentParams, alignment_constraint, gtmr_derivative,
                            hover_state, integrate_step, make_state, output_map, quadrotor,
                            tilted_hexarotor)


@pytest.fixture(params=["quad", "hex"])
def params(request):
    return quadrotor() if request.param == "quad" else tilted_hexarotor()


def test_hover_is_equilibrium(params):
    x = hover_state(params, [1.0, 2.0, 3.0])
    dx = gtmr_derivative(x, np.zeros(params.n), params)
    assert np.abs(dx).max() <= 1e-9


def test_quadrotor_hover_speed_closed_form():
    p = quadrotor(mass=1.2)
    Om = p.hover_speeds()
    np.testing.assert_allclose(4 * p.c_f * Om**2, p.mass * p.gravity, rtol=1e-12)
    np.testing.assert_allclose(Om, Om[0], rtol=1e-12)


def test_free_fall_without_rotors(params):
    x = make_state(Omega=np.zeros(params.n))
    dx = gtmr_derivative(x, np.zeros(params.n), params)
    np.testing.assert_allclose(dx[7:10], [0, 0, -params.gravity], atol=1e-15)
    x1 = integrate_step(x, np.zeros(params.n), 1.0, params)
    assert x1[2] == pytest.approx(-params.gravity / 2, abs=1e-12)


def test_rotor_speeds_advance_linearly(params):
    x = hover_state(params)
    u = np.linspace(-10, 10, params.n)
    x1 = integrate_step(x, u, 0.02, params)
    np.testing.assert_allclose(x1[OMEGA0:], x[OMEGA0:] + 0.02 * u, rtol=0, atol=1e-12)
    x0 = integrate_step(x, np.zeros(params.n), 0.02, params)
    np.testing.assert_array_equal(x0[OMEGA0:], x[OMEGA0:])


def test_batch_matches_single(params, rng):
    X = np.array([hover_state(params) for _ in range(5)])
    X[:, 10:13] = rng.normal(size=(5, 3))
    U = rng.normal(size=(5, params.n)) * 50
    batch = gtmr_derivative(X, U, params)
    for i in range(5):
        np.testing.assert_allclose(batch[i], gtmr_derivative(X[i], U[i], params), rtol=1e-12, atol=1e-12)


def test_torque_free_rotation_conserves_momentum():
    # asymmetric body with no rotor speed: world angular momentum and energy are invariants
    p = quadrotor()
    x = make_state(omega=[1.0, 0.3, -2.0], Omega=np.zeros(4))
    I = p.inertia

    def invariants(x):
        R = quat_to_rotmat(x[3:7])
        w = x[10:13]
        return R @ I @ w, 0.5 * w @ I @ w

    L0, E0 = invariants(x)
    for _ in range(2000):
        x = integrate_step(x, np.zeros(4), 1e-3, p)
    L1, E1 = invariants(x)
    np.testing.assert_allclose(L1, L0, atol=1e-8)
    assert E1 == pytest.approx(E0, rel=1e-8)


def test_thrust_tilted_attitude_accelerates_sideways():
    p = quadrotor()
    q = quat_from_axis_angle([0, 1, 0], 0.1)  # pitch: thrust leans toward +x
    x = make_state(q=q, Omega=p.hover_speeds())
    dx = gtmr_derivative(x, np.zeros(4), p)
    assert dx[7] == pytest.approx(p.gravity * np.sin(0.1), rel=1e-12)


def test_parameter_validation():
    p = quadrotor()
    with pytest.raises(ValueError):
        type(p)(p.mass, p.inertia, p.rotor_positions[:3], p.rotor_axes[:3], p.spin[:3])
    with pytest.raises(ValueError):
        type(p)(-1.0, p.inertia, p.rotor_positions, p.rotor_axes, p.spin)
    with pytest.raises(ValueError):
        type(p)(p.mass, -p.inertia, p.rotor_positions, p.rotor_axes, p.spin)
    with pytest.raises(ValueError):
        integrate_step(hover_state(p), np.zeros(4), 0.0, p)


def test_mass_scale_copy():
    p = quadrotor()
    q = p.with_mass_scale(1.1)
    assert q.mass == pytest.approx(1.1 * p.mass)
    np.testing.assert_allclose(q.hover_speeds(), p.hover_speeds() * np.sqrt(1.1))


def test_output_map():
    p = quadrotor()
    x = make_state(p=[1, 2, 3], q=quat_from_axis_angle([0, 0, 1], np.pi / 2), v=[4, 5, 6],
                   Omega=p.hover_speeds())
    np.testing.assert_allclose(output_map(x), [1, 2, 3, np.pi / 2], atol=1e-12)
    np.testing.assert_allclose(output_map(x, selector="extended"), [1, 2, 3, np.pi / 2, 4, 5, 6],
                               atol=1e-12)
    assert output_map(np.stack([x, x])).shape == (2, 4)
    with pytest.raises(UnknownSelector):
        output_map(x, selector="attitude")


def test_alignment_examples():
    comm = AlignmentParams(g_min=0.5)
    x = hover_state(quadrotor(), [0, 0, 10])
    # level dipole (axis = body z): horizontal nodes sit in the gain maximum
    assert alignment_constraint(x, [50, 0, 10], [-50, 0, 10], comm) == pytest.approx(0.5, abs=1e-12)
    # a node straight above is in the null
    assert alignment_constraint(x, [50, 0, 10], [0, 0, 30], comm) == pytest.approx(-0.5, abs=1e-12)
    # batched form
    X = np.stack([x, x])
    np.testing.assert_allclose(alignment_constraint(X, [50, 0, 10], [-50, 0, 10], comm), [0.5, 0.5])
