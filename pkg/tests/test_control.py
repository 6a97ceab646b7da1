import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsim.actuator import current_envelope, load_actuator_config
from quadsim.control import (
    ACTION_DIM, OBS_DIM, OBS_NAMES, ContactEstimatorConfig, ControlConfigError, Controller,
    ControllerConfig, Feedback, FlightPhaseError, PolicyParams, SwingGains, distribute_forces,
    estimate_contact, grasp_map, linear_policy, load_controller_config, load_policy, save_policy,
    stabilizer_policy, stance_torques, swing_torques)
from quadsim.gait import stand, trot
from quadsim.kinematics import jacobian
from quadsim.simworld import SimConfig, Terrain, World, initial_state

MG = 25.0 * 9.81
MOTOR = load_actuator_config().motor


def level_obs():
    obs = np.zeros(OBS_DIM)
    obs[OBS_NAMES.index("up_z")] = 1.0
    return obs


def test_zero_policy():
    shifts, wrench = linear_policy(np.ones(OBS_DIM), PolicyParams.zeros())
    assert shifts.shape == (4, 2) and wrench.shape == (6,)
    assert not shifts.any() and not wrench.any()


def test_bias_only_policy(rng):
    bias = rng.normal(size=ACTION_DIM)
    params = PolicyParams(np.zeros((ACTION_DIM, OBS_DIM)), bias)
    for obs in rng.normal(size=(5, OBS_DIM)):
        shifts, wrench = linear_policy(obs, params)
        np.testing.assert_array_equal(np.concatenate((shifts.ravel(), wrench)), bias)


def test_policy_dimension_mismatch():
    with pytest.raises(ControlConfigError):
        linear_policy(np.zeros(OBS_DIM + 1), PolicyParams.zeros())
    with pytest.raises(ControlConfigError):
        linear_policy(np.zeros(OBS_DIM), PolicyParams.zeros(action_dim=ACTION_DIM - 1))
    with pytest.raises(ControlConfigError):
        PolicyParams(np.zeros((3, 4)), np.zeros(4))
    with pytest.raises(ControlConfigError):
        PolicyParams(np.full((ACTION_DIM, OBS_DIM), np.nan), np.zeros(ACTION_DIM))


def test_policy_affine_identity(rng):
    params = PolicyParams(rng.normal(size=(ACTION_DIM, OBS_DIM)), rng.normal(size=ACTION_DIM))

    def act(o):
        s, w = linear_policy(o, params)
        return np.concatenate((s.ravel(), w))

    for _ in range(50):
        x, y = rng.normal(size=(2, OBS_DIM))
        a, b = rng.normal(size=2)
        lhs = act(a * x + b * y)
        rhs = a * act(x) + b * act(y) - (a + b - 1) * params.bias
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()))


def test_shipped_stabilizer_holds_weight():
    _, wrench = linear_policy(level_obs(), load_policy("stabilizer"))
    np.testing.assert_allclose(wrench, (0, 0, MG, 0, 0, 0), atol=1e-9)
    assert MG == pytest.approx(245.25)


def test_shipped_stabilizer_matches_generator():
    shipped = load_policy("stabilizer")
    fresh = stabilizer_policy()
    np.testing.assert_allclose(shipped.matrix, fresh.matrix)
    np.testing.assert_allclose(shipped.bias, fresh.bias)


def test_zero_policy_file():
    params = load_policy("zero")
    assert not params.matrix.any() and not params.bias.any()


def test_policy_save_load(tmp_path, rng):
    params = PolicyParams(rng.normal(size=(ACTION_DIM, OBS_DIM)), rng.normal(size=ACTION_DIM))
    save_policy(params, tmp_path / "p.json")
    back = load_policy(tmp_path / "p.json")
    np.testing.assert_array_equal(back.matrix, params.matrix)
    np.testing.assert_array_equal(back.bias, params.bias)


def symmetric_feet(h=0.4):
    return np.array([[0.275, 0.15, -h], [0.275, -0.15, -h], [-0.275, 0.15, -h], [-0.275, -0.15, -h]])


def test_four_feet_share_weight():
    dist = distribute_forces((0, 0, MG, 0, 0, 0), symmetric_feet(), 0.6)
    np.testing.assert_allclose(dist.forces, np.tile((0, 0, MG / 4), (4, 1)), atol=1e-9)
    assert dist.forces[0, 2] == pytest.approx(61.3125)


def test_diagonal_pair_shares_weight():
    feet = symmetric_feet()[[0, 3]]
    dist = distribute_forces((0, 0, MG, 0, 0, 0), feet, 0.6)
    np.testing.assert_allclose(dist.forces, np.tile((0, 0, MG / 2), (2, 1)), atol=1e-9)


def test_random_wrench_reproduced(rng):
    feet = symmetric_feet() + rng.normal(scale=0.02, size=(4, 3))
    g = grasp_map(feet)
    for w in rng.normal(scale=100, size=(100, 6)):
        dist = distribute_forces(w, feet, 0.6)
        assert np.linalg.norm(g @ dist.unclamped.ravel() - w) <= 1e-9 * np.linalg.norm(w)
        assert dist.residual <= 1e-9 * np.linalg.norm(w)


@settings(max_examples=200, deadline=None)
@given(w=st.lists(st.floats(-500, 500), min_size=6, max_size=6), mu=st.floats(0, 1.5))
def test_clamped_forces_feasible(w, mu):
    dist = distribute_forces(w, symmetric_feet(), mu)
    for f in dist.forces:
        assert f[2] >= 0
        assert math.hypot(f[0], f[1]) <= mu * f[2] + 1e-9


def test_clamp_on_tilted_normal():
    n = np.array([-math.sin(0.2), 0.0, math.cos(0.2)])
    dist = distribute_forces((80, 0, MG, 0, 0, 0), symmetric_feet(), 0.3, normal=n)
    for f in dist.forces:
        fn = f @ n
        assert fn >= 0
        assert np.linalg.norm(f - fn * n) <= 0.3 * fn + 1e-9


def test_flight_phase_error():
    with pytest.raises(FlightPhaseError):
        distribute_forces((0, 0, MG, 0, 0, 0), np.empty((0, 3)), 0.6)


def test_grasp_map_moment():
    g = grasp_map([[1.0, 0.0, 0.0]])
    np.testing.assert_allclose(g @ np.array([0, 0, 2.0]), (0, 0, 2, 0, -2, 0))


def test_stance_torques_straight_leg(model):
    tau = stance_torques((0, 0, 100.0), (0, 0, 0), "FL", model)
    assert tau[1] == pytest.approx(0, abs=1e-12) and tau[2] == pytest.approx(0, abs=1e-12)


def test_stance_torques_power_balance(model, rng):
    for _ in range(200):
        f, q, qd = rng.normal(size=(3, 3))
        tau = stance_torques(f, q, "RR", model)
        # the leg pushes on the ground with -f
        assert (-f) @ (jacobian(q, "RR", model) @ qd) == pytest.approx(tau @ qd, abs=1e-12)


def test_stance_torques_linear(model, rng):
    f, q = rng.normal(size=(2, 3))
    np.testing.assert_allclose(stance_torques(2 * f, q, "FR", model), 2 * stance_torques(f, q, "FR", model))


def test_stance_torques_push_down(model):
    # a crouched leg must extend (negative knee torque) to push the body up
    q = np.array([0.0, 0.6, 1.2])
    tau = stance_torques((0, 0, 60.0), q, "FL", model)
    assert tau[2] < 0


def test_swing_torques():
    gains = SwingGains((40, 40, 40), (0.8, 0.8, 0.8))
    q = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(swing_torques(q, q, q, q, gains), 0)
    pure_p = SwingGains((7.0, 8.0, 9.0), (0.0, 0.0, 0.0))
    np.testing.assert_allclose(swing_torques(q, q, q + 1, q, pure_p), (7, 8, 9))
    with pytest.raises(ControlConfigError):
        SwingGains((-1, 0, 0), (0, 0, 0))


def test_swing_tracks_one_hertz_sinusoid(model):
    """Airborne robot, no gravity: the knee follows a 1 Hz reference."""
    terrain = Terrain()
    world = World(model, terrain=terrain)
    state = initial_state(model, terrain, q=np.tile([0.0, 0.4, 0.9], (4, 1)))
    state.base_position[2] = 2.0
    gains = load_controller_config().swing_gains
    config = SimConfig(gravity=0.0)
    errors = []
    torques = np.zeros((4, 3))
    dt, ctrl_every = 1e-3, 1 / 400
    next_tick = 0.0
    for _ in range(3000):
        t = state.time
        q_des = np.tile([0.0, 0.4, 0.9 + 0.3 * math.sin(2 * math.pi * t)], (4, 1))
        qd_des = np.tile([0.0, 0.0, 0.6 * math.pi * math.cos(2 * math.pi * t)], (4, 1))
        if t >= next_tick - 1e-12:
            torques = np.array([swing_torques(state.q[i], state.qdot[i], q_des[i], qd_des[i], gains)
                                for i in range(4)])
            next_tick += ctrl_every
        state = world.step(state, torques, dt, config)
        errors.append(state.q[:, 2] - q_des[:, 2])
    rms = float(np.sqrt(np.mean(np.square(errors))))
    assert rms < 0.05


def test_contact_estimator_examples(model):
    cfg = ContactEstimatorConfig()
    contact, torque, _ = estimate_contact((0, 0, 0), (0, 0.5, 1), (0, 0, 0), model, cfg)
    assert not contact and torque == 0.0
    contact, torque, _ = estimate_contact((0, 0, 5.0), (0, 0.5, 1), (0, 0, 0), model, cfg)
    assert torque == pytest.approx(0.0954929658551372 * 5 * (90 / 11) * 0.9, rel=1e-12)
    assert round(torque, 2) == 3.52
    assert contact


def test_contact_estimator_config_invariants():
    with pytest.raises(ControlConfigError):
        ContactEstimatorConfig(torque_threshold=1.0, hysteresis=1.0)
    with pytest.raises(ControlConfigError):
        ContactEstimatorConfig(low_pass_cutoff=0.0)


def _drive(model, cfg, currents, dt=1 / 400):
    state, flags = None, []
    for i in currents:
        contact, _, state = estimate_contact((0, 0, i), (0, 0, 0), (0, 0, 0), model, cfg, state, dt)
        flags.append(contact)
    return np.array(flags)


def test_contact_step_single_transition_each_way(model):
    cfg = ContactEstimatorConfig()
    currents = np.r_[np.zeros(40), np.full(80, 8.0), np.zeros(80)]
    flags = _drive(model, cfg, currents)
    edges = np.flatnonzero(np.diff(flags.astype(int)))
    assert len(edges) == 2
    # the filter delays the assertion by at least one tick, and by well under 20 ms
    assert 40 <= edges[0] < 40 + 8


def test_contact_hysteresis_holds_near_threshold(model):
    cfg = ContactEstimatorConfig()
    per_amp = 0.0954929658551372 * (90 / 11) * 0.9
    rng = np.random.default_rng(0)
    level = (cfg.torque_threshold - 0.25) / per_amp
    noise = rng.uniform(-0.2, 0.2, 400) / per_amp
    currents = np.r_[np.full(40, 8.0), level + noise]
    flags = _drive(model, cfg, currents)
    assert flags[40:].all()
    no_hyst = ContactEstimatorConfig(hysteresis=0.0)
    assert not _drive(model, no_hyst, currents)[200:].all()


@settings(max_examples=100, deadline=None)
@given(levels=st.lists(st.floats(-12, 12), min_size=2, max_size=12),
       holds=st.lists(st.integers(14, 60), min_size=12, max_size=12))
def test_contact_toggles_at_most_once_per_step(model, levels, holds):
    """Steps held for at least one filter time scale (1/30 Hz ~ 14 ticks) never chatter.

    A step that reverses the torque sign passes through zero, so it may
    deassert and reassert once each.
    """
    cfg = ContactEstimatorConfig()
    currents = np.concatenate([np.full(h, v) for v, h in zip(levels, holds)])
    flags = _drive(model, cfg, currents)
    toggles = np.count_nonzero(np.diff(flags.astype(int)))
    assert toggles <= 2 * len(levels) - 1


def _feedback(model, state, t=0.0):
    return Feedback(t, state.base_position, state.base_orientation, state.base_linear_velocity,
                    state.base_angular_velocity, state.q, state.qdot, np.zeros((4, 3)))


def test_zero_policy_zero_gains_zero_torque(model):
    cfg = ControllerConfig(swing_gains=SwingGains((0, 0, 0), (0, 0, 0)), stance_kd=0.0)
    terrain = Terrain()
    state = initial_state(model, terrain)
    for sched in (stand(), trot()):
        ctrl = Controller(model, sched, PolicyParams.zeros(), terrain, MOTOR, cfg)
        for t in np.linspace(0, 1, 9):
            assert not ctrl.control_tick(_feedback(model, state, t)).any()


def test_control_tick_deterministic(model, rng):
    terrain = Terrain.incline(5.0)
    state = initial_state(model, terrain)
    policy = load_policy("stabilizer")
    a = Controller(model, trot(), policy, terrain, MOTOR, command_velocity=(0.3, 0))
    b = Controller(model, trot(), policy, terrain, MOTOR, command_velocity=(0.3, 0))
    for t in np.arange(0, 1, 1 / 400):
        state.qdot = rng.normal(scale=0.1, size=(4, 3))
        fb = _feedback(model, state, t)
        np.testing.assert_array_equal(a.control_tick(fb), b.control_tick(fb))


def test_control_torques_within_envelope(model, rng):
    terrain = Terrain()
    state = initial_state(model, terrain)
    ctrl = Controller(model, trot(), load_policy("stabilizer"), terrain, MOTOR, command_velocity=(0.3, 0))
    gain = model.reductions * model.efficiencies
    for t in np.arange(0, 1, 1 / 400):
        state.qdot = rng.normal(scale=5, size=(4, 3))
        state.base_linear_velocity = rng.normal(scale=2, size=3)
        tau = ctrl.control_tick(_feedback(model, state, t))
        cap = current_envelope(state.qdot * model.reductions, MOTOR) * MOTOR.kt * gain
        assert np.isfinite(tau).all()
        assert np.all(np.abs(tau) <= cap + 1e-12)


def test_standing_closed_loop(model):
    """Stand controller: support ~ mg, height error < 5 mm, drift < 1 mm over the last second."""
    terrain = Terrain()
    world = World(model, terrain=terrain)
    state = initial_state(model, terrain)
    ctrl = Controller(model, stand(), load_policy("stabilizer"), terrain, MOTOR)
    torques = np.zeros((4, 3))
    support, heights = [], []
    last_tick = -1
    for k in range(2000):
        if (k * 400) // 1000 != last_tick:  # 400 Hz control on the 1 kHz physics clock
            last_tick = (k * 400) // 1000
            fb = Feedback(state.time, state.base_position.copy(), state.base_orientation.copy(),
                          state.base_linear_velocity.copy(), state.base_angular_velocity.copy(),
                          state.q.copy(), state.qdot.copy(), state.actuators.current.copy())
            torques = ctrl.control_tick(fb)
        state = world.step(state, torques, 1e-3)
        if k >= 1000:
            support.append(state.foot_forces[:, 2].sum())
            heights.append(state.base_position[2])
    assert np.mean(support) == pytest.approx(MG, rel=0.01)
    assert abs(heights[-1] - model.nominal_height) < 5e-3
    assert max(heights) - min(heights) < 1e-3


def test_controller_config_file():
    cfg = load_controller_config()
    assert cfg.contact.torque_threshold == 3.0
    assert cfg.contact.low_pass_cutoff == 30.0
    assert cfg.contact.hysteresis == 0.5
    assert cfg.foothold_gain == 0.03
