import math

import numpy as np
import pytest

from liftmpc.examples import ConfigError, MotorParams, build, register_example, EXAMPLES


def test_pwa_build_parameters():
    pwa = build("pwa")
    assert pwa.N == 3
    assert np.allclose(pwa.plant.input_box.lower, [-10.0])
    assert np.allclose(pwa.plant.input_box.upper, [2.0])
    assert np.allclose(pwa.plant.state_box.lower, [-5.0, 0.0])
    assert np.allclose(pwa.plant.state_box.upper, [0.0, 6.0])
    assert np.allclose(pwa.x_S, [-5.0, 0.0])


def test_unicycle_build_parameters():
    uni = build("unicycle")
    assert uni.N == 5
    assert uni.dt == 0.1
    assert np.allclose(uni.target, [5.0, 10.0])
    assert uni.plant.input_box.upper[0] == 5.0
    assert not np.isfinite(uni.plant.input_box.upper[1])


def test_motor_build_parameters():
    motor = build("dc_motor")
    assert motor.N == 5
    assert motor.p.dt == 0.01
    assert motor.omega_ref == 6.0
    assert np.allclose(motor.plant.state_box.upper, [5.0, np.inf, 10.0])


def test_unknown_example_rejected():
    with pytest.raises(ConfigError):
        build("pendulum")


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        build("pwa", {"mass": 3.0})


def test_bad_horizon_rejected():
    with pytest.raises(ConfigError):
        build("pwa", {"N": 0})


def test_overrides_apply():
    pwa = build("pwa", {"N": 4, "x_S": [-4.0, 1.0]})
    assert pwa.N == 4
    assert np.allclose(pwa.x_S, [-4.0, 1.0])
    motor = build("dc_motor", {"params": {"dt": 0.01, "L_a": 0.3}})
    assert motor.p.L_a == 0.3


def test_register_custom_example():
    class Dummy:
        def __init__(self):
            self.example_id = "dummy"

    register_example("dummy", Dummy)
    try:
        assert isinstance(build("dummy"), Dummy)
    finally:
        EXAMPLES.pop("dummy")


def test_pwa_branch_continuity():
    pwa = build("pwa")
    for y12 in ((-1.0, -0.5), (0.0, 0.0), (-3.0, -2.5)):
        low = 5.0 * -2.0 - 10.0 * y12[0] + 5.0 * y12[1]
        high = 4.5 * -2.0 - 10.0 * y12[0] + 5.0 * y12[1] - 1.0
        assert low == pytest.approx(high, abs=1e-12)
        Y = np.array([[-2.0, y12[0], y12[1]]])
        assert pwa.plant.input_map(Y)[0] == pytest.approx(low, abs=1e-12)


def test_pwa_stage_cost_identity():
    """The output-window cost equals the quadratic state form it encodes."""
    pwa = build("pwa")
    M = np.array([[10.0, 1.0], [1.0, 0.2]])
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = np.array([rng.uniform(-5.0, 0.0), rng.uniform(0.0, 6.0)])
        y0 = x[0]
        y1 = x[0] + 0.2 * x[1]
        window = np.array([[y0, y1]])
        assert pwa.stage_cost(window) == pytest.approx(float(x @ M @ x), rel=1e-12, abs=1e-12)


def test_motor_stage_cost_center():
    motor = build("dc_motor")
    # consistent equilibrium: field current from the seed, cruise current
    # from the torque balance, so the cruise has exactly zero cost
    assert motor.u1_star * motor.I_star == pytest.approx(
        motor.p.D * motor.omega_ref / motor.p.K_y, rel=1e-12)
    assert motor.stage_cost(motor.eq_window(3.7)) < 1e-20


def test_unicycle_stage_cost():
    uni = build("unicycle")
    w = np.array([[5.0, 5.0, 5.0], [10.0, 10.0, 10.0]])
    assert uni.stage_cost(w) == 0.0
    w2 = np.array([[4.0, 4.1, 4.2], [10.0, 10.0, 10.0]])
    # 20 * (1)^2 + (0.1/0.1)^2
    assert uni.stage_cost(w2) == pytest.approx(21.0, rel=1e-12)


@pytest.mark.parametrize("name", ["pwa", "dc_motor", "unicycle"])
def test_seeds_converge_and_respect_constraints(name):
    ex = build(name)
    seed = ex.seed()
    for x in seed.states:
        assert ex.plant.state_feasible(x, slack=1e-9)
    for u in seed.inputs:
        assert ex.plant.input_box.contains(u, slack=1e-9)
    depth = ex.control_system.lift_depth
    final = seed.outputs[-depth:].T
    assert ex.deviation(final) <= ex.tol_conv


def test_pwa_seed_reaches_origin():
    pwa = build("pwa")
    seed = pwa.seed()
    assert np.max(np.abs(seed.states[-1])) <= 1e-6


def test_motor_seed_settles_at_setpoint():
    motor = build("dc_motor")
    seed = motor.seed()
    assert abs(seed.states[-1][2] - 6.0) <= motor.tol_conv
    assert abs(seed.states[-1][0] - motor.I_star) <= 1e-4


def test_unicycle_seed_path_shape():
    uni = build("unicycle")
    seed = uni.seed()
    assert np.hypot(*(seed.states[-1][:2] - uni.target)) <= uni.tol_conv
    assert seed.states[:, 1].max() <= 10.0
    assert seed.states[:, 0].min() >= 0.0
    assert (seed.states[:, 0] - seed.states[:, 1]).max() <= 2.0
    assert seed.states[:, 2].min() >= -math.pi / 2 - 1e-12
    assert seed.states[:, 2].max() <= math.pi / 2 + 1e-12


def test_stage_cost_positive_definite_spot_check():
    """Stage costs vanish only on the equilibrium set."""
    rng = np.random.default_rng(2)
    pwa = build("pwa")
    assert pwa.stage_cost(pwa.eq_window()) == 0.0
    for _ in range(100):
        w = rng.uniform(-5.0, 0.0, size=(1, 2))
        if np.max(np.abs(w)) > 1e-9:
            assert pwa.stage_cost(w) > 0.0
    uni = build("unicycle")
    assert uni.stage_cost(uni.eq_window()) == 0.0
    for _ in range(100):
        w = rng.uniform(0.0, 10.0, size=(2, 3))
        if np.max(np.abs(w[:, :2] - uni.target[:, None])) > 1e-9:
            assert uni.stage_cost(w) > 0.0
