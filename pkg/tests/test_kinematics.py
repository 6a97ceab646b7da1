import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsim.kinematics import (
    FLEXED_BACK, FLEXED_FORWARD, UnreachableError, configuration_branch, fk_and_jacobian,
    forward_kinematics, inverse_kinematics, jacobian, project_reachable)
from quadsim.morphology import LEG_ORDER, LEG_SIDE


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s, 0], [0, 1, 0, 0], [-s, 0, c, 0], [0, 0, 0, 1.0]])


def _tr(x, y, z):
    t = np.eye(4)
    t[:3, 3] = x, y, z
    return t


def htm_foot(q, leg, model):
    """Homogeneous-transform chain: torso -> ab/ad axis -> hip pitch -> knee -> foot."""
    side = LEG_SIDE[leg]
    hx, hy, hz = model.hip_offsets[leg]
    d = model.abad_offset
    # hip pitch about -y makes positive angles swing the foot forward
    chain = (_tr(hx, hy - side * d, hz) @ _rx(side * q[0]) @ _tr(0, side * d, 0)
             @ _ry(-q[1]) @ _tr(0, 0, -model.thigh_length)
             @ _ry(q[2]) @ _tr(0, 0, -model.shank_length))
    return chain[:3, 3]


def random_in_limits(model, rng, n):
    lo, hi = model.joint_limits.lower_array, model.joint_limits.upper_array
    return rng.uniform(lo, hi, size=(n, 3))


@pytest.mark.parametrize("leg", LEG_ORDER)
def test_fk_zero_is_straight_down(model, leg):
    p = forward_kinematics((0, 0, 0), leg, model)
    np.testing.assert_allclose(p, model.hip_offset(leg) + (0, 0, -0.5), atol=1e-15)


@pytest.mark.parametrize("leg", LEG_ORDER)
def test_fk_hip_90_points_forward(model, leg):
    p = forward_kinematics((0, math.pi / 2, 0), leg, model)
    np.testing.assert_allclose(p, model.hip_offset(leg) + (0.5, 0, 0), atol=1e-15)


def test_positive_abad_swings_outward(model):
    for leg in LEG_ORDER:
        p0 = forward_kinematics((0, 0, 0), leg, model)
        p1 = forward_kinematics((0.2, 0, 0), leg, model)
        assert LEG_SIDE[leg] * (p1[1] - p0[1]) > 0


def test_fk_matches_transform_chain(model, rng):
    for q in rng.uniform(-math.pi, math.pi, size=(500, 3)):
        for leg in LEG_ORDER:
            np.testing.assert_allclose(forward_kinematics(q, leg, model), htm_foot(q, leg, model),
                                       rtol=0, atol=1e-12)


def test_ik_extended_leg(model):
    for leg in LEG_ORDER:
        q = inverse_kinematics(model.hip_offset(leg) + (0, 0, -0.5), leg, model)
        np.testing.assert_allclose(q, (0, 0, 0), atol=1e-7)


def test_ik_unreachable(model):
    with pytest.raises(UnreachableError):
        inverse_kinematics(model.hip_offset("FL") + (0, 0, -0.6), "FL", model)
    # inside the ab/ad clearance cylinder
    with pytest.raises(UnreachableError):
        inverse_kinematics(model.hip_offset("FL") + (0, -model.abad_offset, 0), "FL", model)


def test_ik_bad_branch_name(model):
    with pytest.raises(ValueError):
        inverse_kinematics(model.hip_offset("FL") + (0, 0, -0.4), "FL", model, knee_branch="sideways")


def test_ik_fk_round_trip_10k(model):
    rng = np.random.default_rng(7)
    worst = 0.0
    for q in random_in_limits(model, rng, 10_000):
        leg = LEG_ORDER[rng.integers(4)]
        knee, plane = configuration_branch(q, model)
        q_back = inverse_kinematics(forward_kinematics(q, leg, model), leg, model, knee, plane)
        worst = max(worst, float(np.max(np.abs(q_back - q))))
    assert worst < 1e-9


def test_ik_branches_reach_same_point(model):
    p = model.hip_offset("RR") + (0.05, -0.02, -0.35)
    q_back = inverse_kinematics(p, "RR", model, FLEXED_BACK)
    q_fwd = inverse_kinematics(p, "RR", model, FLEXED_FORWARD)
    assert q_back[2] > 0 > q_fwd[2]
    for q in (q_back, q_fwd):
        np.testing.assert_allclose(forward_kinematics(q, "RR", model), p, atol=1e-12)


def _fd_jacobian(q, leg, model, h=1e-6):
    cols = []
    for j in range(3):
        dq = np.zeros(3)
        dq[j] = h
        cols.append((forward_kinematics(q + dq, leg, model) - forward_kinematics(q - dq, leg, model)) / (2 * h))
    return np.array(cols).T


def test_jacobian_matches_finite_differences(model, rng):
    worst = 0.0
    for q in random_in_limits(model, rng, 2000):
        for leg in LEG_ORDER:
            jac = jacobian(q, leg, model)
            err = np.linalg.norm(jac - _fd_jacobian(q, leg, model)) / np.linalg.norm(jac)
            worst = max(worst, err)
    assert worst < 1e-6


def test_fk_and_jacobian_agree(model, rng):
    q = rng.uniform(-1, 1, 3)
    p, jac = fk_and_jacobian(q, "FR", model)
    np.testing.assert_array_equal(p, forward_kinematics(q, "FR", model))
    np.testing.assert_array_equal(jac, jacobian(q, "FR", model))


def test_straight_leg_vertical_force_loads_no_pitch_joint(model):
    tau = jacobian((0, 0, 0), "FL", model).T @ np.array([0, 0, -100.0])
    assert tau[1] == pytest.approx(0, abs=1e-12)
    assert tau[2] == pytest.approx(0, abs=1e-12)


def test_jacobian_pitch_columns_scale_with_lengths(model, rng):
    big = model.replace(thigh_length=0.5, shank_length=0.5)
    for q in rng.uniform(-1, 1, size=(20, 3)):
        j1, j2 = jacobian(q, "RL", model), jacobian(q, "RL", big)
        np.testing.assert_allclose(j2[:, 1:], 2 * j1[:, 1:], atol=1e-14)


def test_power_balance(model, rng):
    for _ in range(200):
        q, qd, f = rng.normal(size=(3, 3))
        jac = jacobian(q, "FL", model)
        assert f @ (jac @ qd) == pytest.approx((jac.T @ f) @ qd, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(q=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       dq=st.lists(st.floats(-0.1, 0.1), min_size=3, max_size=3),
       leg=st.sampled_from(LEG_ORDER))
def test_fk_lipschitz(model, q, dq, leg):
    q, dq = np.array(q), np.array(dq)
    bound = model.thigh_length + model.shank_length + model.abad_offset
    moved = np.linalg.norm(forward_kinematics(q + dq, leg, model) - forward_kinematics(q, leg, model))
    assert moved <= bound * np.linalg.norm(dq) + 1e-12


def test_project_reachable_gives_solvable_targets(model, rng):
    for p in rng.uniform(-0.8, 0.8, size=(500, 3)):
        for leg in ("FL", "RR"):
            inverse_kinematics(project_reachable(p, leg, model), leg, model)


def test_project_reachable_keeps_reachable_points(model):
    p = model.hip_offset("FL") + (0.05, 0.0, -0.4)
    np.testing.assert_allclose(project_reachable(p, "FL", model), p)
