import math

import numpy as np
import pytest

from liftmpc.examples import build
from liftmpc.systems import (
    Box,
    MapDomainError,
    augment,
    backward_shift,
    box_membership,
    check_monotone_on_lines,
    forward_shift,
    lifted_from_rollout,
    reconstruct_input,
    reconstruct_state,
    window_from_rollout,
)


@pytest.fixture(scope="module")
def pwa():
    return build("pwa")


@pytest.fixture(scope="module")
def motor():
    return build("dc_motor")


@pytest.fixture(scope="module")
def unicycle():
    return build("unicycle")


# ---------------------------------------------------------------------------
# shift operators


def test_forward_shift_definitional():
    w = np.array([[0.0, 1.0]])
    assert np.array_equal(forward_shift(w, [2.0]), np.array([[1.0, 2.0]]))


def test_forward_shift_zero_fixed_point():
    w = np.zeros((2, 2))
    assert np.array_equal(forward_shift(w, np.zeros(2)), w)


def test_shift_commutes_with_convex_combination():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w1, w2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4))
        a, b = rng.normal(size=3), rng.normal(size=3)
        lam = 0.3
        left = lam * forward_shift(w1[0], a) + (1.0 - lam) * forward_shift(w2, b)
        right = forward_shift(lam * w1[0] + (1.0 - lam) * w2, lam * a + (1.0 - lam) * b)
        assert np.max(np.abs(left - right)) < 1e-12
        left = lam * backward_shift(w1[0], a) + (1.0 - lam) * backward_shift(w2, b)
        right = backward_shift(lam * w1[0] + (1.0 - lam) * w2, lam * a + (1.0 - lam) * b)
        assert np.max(np.abs(left - right)) < 1e-12


def test_backward_shift_definitional():
    w = np.array([[1.0, 2.0]])
    assert np.array_equal(backward_shift(w, [0.0]), np.array([[0.0, 1.0]]))


def test_backward_forward_round_trip():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 3))
    a = rng.normal(size=2)
    assert np.allclose(backward_shift(forward_shift(w, a), w[:, 0]), w)


def test_shift_equilibrium_fixed_point(pwa):
    w = pwa.eq_window()
    y_F = pwa.plant.y_eq
    assert np.array_equal(backward_shift(w, y_F), w)
    assert np.array_equal(forward_shift(w, y_F), w)


def test_shift_dimension_mismatch():
    with pytest.raises(ValueError):
        forward_shift(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        backward_shift(np.zeros((2, 3)), np.zeros(1))


# ---------------------------------------------------------------------------
# reconstruction maps, frozen values


def test_pwa_state_reconstruction(pwa):
    x = reconstruct_state(pwa.plant, np.array([[-5.0, -5.0]]))
    assert np.allclose(x, [-5.0, 0.0])


def test_pwa_input_reconstruction(pwa):
    u = reconstruct_input(pwa.plant, np.array([[-5.0, -5.0, -5.0]]))
    assert abs(u[0]) < 1e-12


def test_pwa_equilibrium_window_input(pwa):
    # at the origin the steady input is -1, reconstructed from zero outputs
    u = reconstruct_input(pwa.plant, np.zeros((1, 3)))
    assert np.allclose(u, [-1.0])


def test_motor_state_reconstruction(motor):
    w = np.array([[1.0, 1.0], [0.0, 0.06]])
    x = reconstruct_state(motor.plant, w)
    assert np.allclose(x, [1.0, 0.0, 6.0])


def test_unicycle_state_reconstruction(unicycle):
    x = reconstruct_state(unicycle.plant, np.array([[0.0, 0.1], [0.0, 0.1]]))
    assert np.allclose(x, [0.0, 0.0, math.pi / 4.0])


def test_unicycle_input_reconstruction(unicycle):
    Y = np.array([[0.0, 0.1, 0.2], [0.0, 0.1, 0.2]])
    u = reconstruct_input(unicycle.plant, Y)
    assert np.allclose(u, [math.sqrt(2.0), 0.0])


def test_unicycle_zero_displacement_guard(unicycle):
    with pytest.raises(MapDomainError):
        reconstruct_state(unicycle.plant, np.zeros((2, 2)))


def test_motor_current_guard(motor):
    Y = np.zeros((2, 3))
    with pytest.raises(MapDomainError):
        reconstruct_input(motor.plant, Y)


def test_reconstruct_shape_checks(pwa):
    with pytest.raises(ValueError):
        reconstruct_state(pwa.plant, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        reconstruct_input(pwa.plant, np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# dynamics, frozen values


def test_pwa_dynamics_low_mode(pwa):
    assert np.allclose(pwa.plant.step([-5.0, 0.0], [0.0]), [-5.0, 0.0])


def test_pwa_dynamics_high_mode(pwa):
    assert np.allclose(pwa.plant.step([0.0, 0.0], [0.0]), [0.0, 1.0])


def test_unicycle_dynamics(unicycle):
    x = unicycle.plant.step([0.0, 0.0, 0.0], [1.0, 0.0])
    assert np.allclose(x, [0.1, 0.0, 0.0])


def test_equilibria():
    for name in ("pwa", "unicycle"):
        ex = build(name)
        x2 = ex.plant.step(ex.plant.x_eq, ex.plant.u_eq)
        assert np.max(np.abs(x2 - ex.plant.x_eq)) < 1e-12
    # the motor equilibrium is a cruise: current and velocity hold, angle drifts
    m = build("dc_motor")
    x2 = m.plant.step(m.plant.x_eq, m.plant.u_eq)
    assert abs(x2[0] - m.plant.x_eq[0]) < 1e-12
    assert abs(x2[2] - m.plant.x_eq[2]) < 1e-12
    assert abs(x2[1] - m.plant.x_eq[1] - m.p.dt * m.omega_ref) < 1e-12


# ---------------------------------------------------------------------------
# round trips


@pytest.mark.parametrize("name,tol", [("pwa", 1e-9), ("dc_motor", 1e-9), ("unicycle", 1e-6)])
def test_round_trip(name, tol):
    ex = build(name)
    sys = ex.plant
    rng = np.random.default_rng(42)
    for _ in range(200):
        x0, us = ex.sample_rollout(rng, sys.lift_depth)
        w = window_from_rollout(sys, x0, us[: sys.lift_depth - 1])
        assert np.max(np.abs(reconstruct_state(sys, w) - x0)) < tol
        Y = lifted_from_rollout(sys, x0, us)
        assert np.max(np.abs(reconstruct_input(sys, Y) - us[0])) < tol


def test_window_from_rollout_arity(pwa):
    with pytest.raises(ValueError):
        window_from_rollout(pwa.plant, pwa.x_S, np.zeros((3, 1)))


# ---------------------------------------------------------------------------
# augmented system


@pytest.mark.parametrize("name", ["dc_motor", "unicycle"])
def test_augmented_round_trip(name):
    ex = build(name)
    aug = ex.control_system
    rng = np.random.default_rng(3)
    for _ in range(100):
        x0, us = ex.sample_rollout(rng, aug.lift_depth + 1)
        xa = np.concatenate([x0, us[0]])
        zs = us[1:]
        w = window_from_rollout(aug, xa, zs[: aug.lift_depth - 1])
        assert np.max(np.abs(reconstruct_state(aug, w) - xa)) < 1e-6
        Y = lifted_from_rollout(aug, xa, zs)
        assert np.max(np.abs(reconstruct_input(aug, Y) - zs[0])) < 1e-6


def test_augmented_compensator_consistency():
    """Reconstruction of z agrees with the compensator update u+ = a u + b z."""
    ex = build("dc_motor")
    rng = np.random.default_rng(8)
    for alpha, beta in ((0.0, 1.0), (0.5, 2.0)):
        aug = augment(ex.plant, alpha=alpha, beta=beta)
        x0, us = ex.sample_rollout(rng, 4)
        u0, u1 = us[0], us[1]
        z0 = (u1 - alpha * u0) / beta
        xa = np.concatenate([x0, u0])
        z_rest = [(us[k + 1] - alpha * us[k]) / beta for k in range(1, len(us) - 1)]
        Y = lifted_from_rollout(aug, xa, np.vstack([[z0], z_rest]))
        assert np.max(np.abs(reconstruct_input(aug, Y) - z0)) < 1e-9


def test_augmented_state_map_stacks(pwa):
    aug = augment(pwa.plant)
    rng = np.random.default_rng(4)
    x0, us = pwa.sample_rollout(rng, 3)
    xa = np.concatenate([x0, us[0]])
    w = window_from_rollout(aug, xa, np.array([us[1], us[2]]))
    rec = reconstruct_state(aug, w)
    assert np.allclose(rec[:2], reconstruct_state(pwa.plant, w[:, :2]), atol=1e-12)
    assert np.allclose(rec[2:], reconstruct_input(pwa.plant, w), atol=1e-12)


def test_augment_requires_nonzero_beta(pwa):
    with pytest.raises(ValueError):
        augment(pwa.plant, beta=0.0)


# ---------------------------------------------------------------------------
# boxes and membership


def test_pwa_boundary_membership(pwa):
    assert box_membership(pwa.plant, x=[-5.0, 0.0])
    assert not box_membership(pwa.plant, u=[2.0001])


def test_motor_unconstrained_component(motor):
    assert box_membership(motor.plant, u=[0.0, 1e6])
    assert not box_membership(motor.plant, u=[5.1, 0.0])


def test_unicycle_halfspaces(unicycle):
    assert unicycle.plant.state_feasible([5.0, 10.0, 0.0])
    assert not unicycle.plant.state_feasible([5.0, 2.0, 0.0])  # x - y > 2
    assert not unicycle.plant.state_feasible([-0.1, 5.0, 0.0])


def test_box_scaling_form():
    box = Box.from_intervals([(-5.0, 0.0), (0.0, 6.0)])
    D, d = box.scaling()
    for v in ([-5.0, 0.0], [0.0, 6.0], [-2.5, 3.0]):
        assert np.max(np.abs(np.diag(D) * np.asarray(v) - d)) <= 1.0 + 1e-12
    assert np.max(np.abs(np.diag(D) * np.array([0.1, 3.0]) - d)) > 1.0


def test_box_validation():
    with pytest.raises(ValueError):
        Box(np.array([1.0]), np.array([0.0]))


# ---------------------------------------------------------------------------
# monotonicity checker


def test_linear_map_monotone(pwa):
    fx = pwa.plant.state_map
    rep = check_monotone_on_lines(lambda w: fx(w.reshape(2, 1).T), np.full(2, -5.0),
                                  np.zeros(2), n_lines=100, n_points=20)
    assert rep.passed


def test_parabola_fails_with_witness():
    rep = check_monotone_on_lines(lambda t: np.array([float(t[0] ** 2)]),
                                  np.array([-1.0]), np.array([1.0]),
                                  n_lines=50, n_points=30)
    assert not rep.passed
    witness = rep.results[0].witness
    assert witness is not None
    a, b, values = witness
    assert values.min() < max(values[0], values[-1]) - 1e-6


def test_unicycle_speed_quasiconvex(unicycle):
    dt = unicycle.dt

    def speed(flat):
        w = flat.reshape(3, 2).T
        return np.array([float(np.hypot(*(w[:, 1] - w[:, 0]))) / dt])

    lo, hi = np.zeros(6), 10.0 * np.ones(6)
    monotone = check_monotone_on_lines(speed, lo, hi, n_lines=200, n_points=30)
    assert not monotone.passed  # dips in the middle of segments
    upper = check_monotone_on_lines(speed, lo, hi, n_lines=200, n_points=30, mode="upper")
    assert upper.passed  # norms peak at segment endpoints


def test_motor_field_current_monotone(motor):
    def u1(flat):
        Y = flat.reshape(3, 2).T
        return np.array([motor.plant.input_map(Y)[0]])

    lo = np.array([0.5, -2.0, 0.5, -2.0, 0.5, -2.0])
    hi = np.array([5.0, 2.0, 5.0, 2.0, 5.0, 2.0])
    rep = check_monotone_on_lines(u1, lo, hi, n_lines=200, n_points=30, tol=1e-8)
    assert rep.passed
