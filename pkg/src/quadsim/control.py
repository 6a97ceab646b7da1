"""Two-level locomotion controller and current-based contact estimation.

A linear policy maps an observation vector to foothold shifts and a body
wrench.  The lower level distributes the wrench over the stance feet and maps
foot forces to joint torques through the leg Jacobian; swing legs track a
swing-foot curve with joint PD.

Observation layout (``OBS_DIM`` = 23), all in the terrain-aligned frame whose
x axis points along the commanded heading on the slope and whose z axis is
the terrain normal:

    0-2   roll, pitch, yaw error (rad)
    3-5   base angular velocity, body frame (rad/s)
    6-8   base linear velocity (m/s)
    9     base height error along the normal (m)
    10-11 commanded velocity x, y (m/s)
    12-14 unit "up" vector (world +z) expressed in the terrain frame
    15-22 sin, cos of each leg phase (FL, FR, RL, RR)

Action layout (``ACTION_DIM`` = 14): foothold shifts (x, y) per leg in metres,
then the body wrench (Fx, Fy, Fz, Tx, Ty, Tz) in N and Nm, terrain frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from quadsim import gait as gaitmod
from quadsim.actuator import current_envelope
from quadsim.kinematics import (
    UnreachableError, fk_and_jacobian, inverse_kinematics, project_reachable)
from quadsim.morphology import LEG_ORDER
from quadsim.simworld import GRAVITY, quat_from_axis_angle, quat_multiply, quat_to_euler, quat_to_matrix

OBS_DIM = 23
ACTION_DIM = 14
OBS_NAMES = (
    "roll", "pitch", "yaw", "wx", "wy", "wz", "vx", "vy", "vz", "height_error",
    "vx_cmd", "vy_cmd", "up_x", "up_y", "up_z",
    "sin_FL", "cos_FL", "sin_FR", "cos_FR", "sin_RL", "cos_RL", "sin_RR", "cos_RR",
)
ACTION_NAMES = (
    "dx_FL", "dy_FL", "dx_FR", "dy_FR", "dx_RL", "dy_RL", "dx_RR", "dy_RR",
    "Fx", "Fy", "Fz", "Tx", "Ty", "Tz",
)


class ControlConfigError(ValueError):
    pass


class FlightPhaseError(ValueError):
    """No stance feet to carry a body wrench."""


# ---------------------------------------------------------------------------
# linear policy

@dataclass(frozen=True)
class PolicyParams:
    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if m.ndim != 2 or b.shape != (m.shape[0],):
            raise ControlConfigError(f"matrix {m.shape} and bias {b.shape} do not agree")
        if not (np.isfinite(m).all() and np.isfinite(b).all()):
            raise ControlConfigError("policy entries must be finite")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, obs_dim=OBS_DIM, action_dim=ACTION_DIM):
        return cls(np.zeros((action_dim, obs_dim)), np.zeros(action_dim))


def linear_policy(obs, params):
    """``(foothold_shifts (4, 2), body_wrench (6,))`` from ``M @ obs + bias``."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (params.matrix.shape[1],):
        raise ControlConfigError(
            f"observation has shape {obs.shape}, policy expects ({params.matrix.shape[1]},)")
    action = params.matrix @ obs + params.bias
    if action.shape != (ACTION_DIM,):
        raise ControlConfigError(f"policy produces {action.shape[0]} actions, expected {ACTION_DIM}")
    return action[:8].reshape(4, 2), action[8:]


def load_policy(path):
    """Load a policy file; bare names resolve to the shipped policies."""
    p = Path(path)
    if p.suffix != ".json":
        p = Path(f"{path}.json")
    if not p.exists():
        text = resources.files("quadsim.data").joinpath(f"policy_{p.stem}.json").read_text()
    else:
        text = p.read_text()
    doc = json.loads(text)
    try:
        params = PolicyParams(doc["matrix"], doc["bias"])
    except KeyError as exc:
        raise ControlConfigError(f"policy file lacks {exc.args[0]!r}") from None
    if "observation" in doc and list(doc["observation"]) != list(OBS_NAMES):
        raise ControlConfigError("policy observation layout does not match this controller")
    return params


def save_policy(params, path, note=""):
    doc = {"note": note, "observation": list(OBS_NAMES), "action": list(ACTION_NAMES),
           "matrix": params.matrix.tolist(), "bias": params.bias.tolist()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def stabilizer_policy(mass=25.0, gravity=GRAVITY, gains=None, height=0.40):
    """Hand-tuned PD stabilizer written as a linear policy.

    Footholds are moved downhill by ``height * up_x`` so that the gravity line
    through the centre of mass meets the support line on a slope.
    """
    g = dict(kp_height=1500.0, kd_height=250.0, kv_x=150.0, kv_y=150.0,
             kp_roll=120.0, kd_roll=8.0, kp_pitch=250.0, kd_pitch=25.0,
             kp_yaw=60.0, kd_yaw=10.0, capture_v=0.0, capture_roll=0.0)
    g.update(gains or {})
    col = {name: i for i, name in enumerate(OBS_NAMES)}
    row = {name: i for i, name in enumerate(ACTION_NAMES)}
    m = np.zeros((ACTION_DIM, OBS_DIM))
    # gravity compensation through the up vector
    for axis, up in (("Fx", "up_x"), ("Fy", "up_y"), ("Fz", "up_z")):
        m[row[axis], col[up]] = mass * gravity
    m[row["Fx"], col["vx"]] = -g["kv_x"]
    m[row["Fx"], col["vx_cmd"]] = g["kv_x"]
    m[row["Fy"], col["vy"]] = -g["kv_y"]
    m[row["Fy"], col["vy_cmd"]] = g["kv_y"]
    m[row["Fz"], col["height_error"]] = -g["kp_height"]
    m[row["Fz"], col["vz"]] = -g["kd_height"]
    m[row["Tx"], col["roll"]] = -g["kp_roll"]
    m[row["Tx"], col["wx"]] = -g["kd_roll"]
    m[row["Ty"], col["pitch"]] = -g["kp_pitch"]
    m[row["Ty"], col["wy"]] = -g["kd_pitch"]
    m[row["Tz"], col["yaw"]] = -g["kp_yaw"]
    m[row["Tz"], col["wz"]] = -g["kd_yaw"]
    # foothold shifts on top of the Raibert term: step toward the velocity error
    for leg in LEG_ORDER:
        m[row[f"dx_{leg}"], col["vx"]] = g["capture_v"]
        m[row[f"dx_{leg}"], col["vx_cmd"]] = -g["capture_v"]
        m[row[f"dy_{leg}"], col["vy"]] = g["capture_v"]
        m[row[f"dy_{leg}"], col["vy_cmd"]] = -g["capture_v"]
        m[row[f"dy_{leg}"], col["roll"]] = -g["capture_roll"]
        m[row[f"dx_{leg}"], col["up_x"]] = -height
        m[row[f"dy_{leg}"], col["up_y"]] = -height
    return PolicyParams(m, np.zeros(ACTION_DIM))


# ---------------------------------------------------------------------------
# force distribution and joint torques

@dataclass
class ForceDistribution:
    forces: np.ndarray          # (k, 3) after clamping
    unclamped: np.ndarray       # (k, 3) least-squares solution
    residual: float             # |G f - w| before clamping
    clamped_residual: float     # |G f - w| after clamping


def grasp_map(feet):
    """6 x 3k map from stacked foot forces to (force, moment about the origin)."""
    feet = np.asarray(feet, dtype=float)
    k = len(feet)
    g = np.zeros((6, 3 * k))
    for i, r in enumerate(feet):
        g[:3, 3 * i:3 * i + 3] = np.eye(3)
        g[3:, 3 * i:3 * i + 3] = np.array([
            [0.0, -r[2], r[1]],
            [r[2], 0.0, -r[0]],
            [-r[1], r[0], 0.0],
        ])
    return g


def distribute_forces(body_wrench, stance_feet, friction, normal=(0.0, 0.0, 1.0)):
    """Minimum-norm least-squares foot forces, then per-foot unilateral/friction clamp.

    ``stance_feet`` are foot positions relative to the centre of mass.
    """
    feet = np.asarray(stance_feet, dtype=float).reshape(-1, 3)
    if len(feet) == 0:
        raise FlightPhaseError("no stance feet: robot is in flight")
    wrench = np.asarray(body_wrench, dtype=float)
    g = grasp_map(feet)
    n = np.asarray(normal, dtype=float)
    f = np.linalg.lstsq(g, wrench, rcond=None)[0]
    residual = float(np.linalg.norm(g @ f - wrench))
    forces = f.reshape(-1, 3).copy()
    unclamped = forces.copy()
    for i, fi in enumerate(forces):
        fn = float(fi @ n)
        if fn <= 0.0:
            forces[i] = 0.0
            continue
        ft = fi - fn * n
        mag = float(np.linalg.norm(ft))
        cap = friction * fn
        if mag > cap:
            forces[i] = fn * n + ft * (cap / mag)
    clamped_residual = float(np.linalg.norm(g @ forces.ravel() - wrench))
    return ForceDistribution(forces, unclamped, residual, clamped_residual)


def stance_torques(foot_force, q, leg_id, model, jac=None):
    """Joint torques making the leg push so the ground returns ``foot_force``.

    ``foot_force`` is the support force wanted on the body (torso frame), so
    the leg must press on the ground with its negative: ``tau = -J^T f``.
    """
    if jac is None:
        _, jac = fk_and_jacobian(q, leg_id, model)
    return -(jac.T @ np.asarray(foot_force, dtype=float))


@dataclass(frozen=True)
class SwingGains:
    kp: tuple[float, float, float] = (40.0, 40.0, 40.0)
    kd: tuple[float, float, float] = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if min(self.kp) < 0 or min(self.kd) < 0:
            raise ControlConfigError("gains must be >= 0")


def swing_torques(q, qdot, q_des, qdot_des, gains):
    kp = np.asarray(gains.kp, dtype=float)
    kd = np.asarray(gains.kd, dtype=float)
    return kp * (np.asarray(q_des) - np.asarray(q)) + kd * (np.asarray(qdot_des) - np.asarray(qdot))


# ---------------------------------------------------------------------------
# contact estimation

@dataclass(frozen=True)
class ContactEstimatorConfig:
    torque_threshold: float = 3.0
    low_pass_cutoff: float = 30.0
    hysteresis: float = 0.5

    def __post_init__(self):
        if not self.torque_threshold > self.hysteresis >= 0:
            raise ControlConfigError("need threshold > hysteresis >= 0")
        if not self.low_pass_cutoff > 0:
            raise ControlConfigError("cutoff must be > 0")


@dataclass(frozen=True)
class ContactFilterState:
    filtered: float = 0.0
    contact: bool = False
    prev_qdot: float | None = None


def knee_external_torque(current, qdot, prev_qdot, dt, model, kt):
    """Knee torque not explained by the motor driving the rotor inertia and friction."""
    ratio = float(model.reductions[2])
    eta = float(model.efficiencies[2])
    measured = kt * current * ratio * eta
    model_torque = model.joint_viscous_friction * qdot
    if prev_qdot is not None and dt:
        model_torque += ratio * ratio * model.rotor_inertia * (qdot - prev_qdot) / dt
    return measured - model_torque


def estimate_contact(currents, q, qdot, model, config, prev_state=None, dt=None, kt=None):
    """Knee-current contact detector with a low-pass filter and hysteresis.

    Returns ``(contact, filtered_torque, new_state)``.
    """
    from quadsim.actuator import torque_constant

    kt = torque_constant(100.0) if kt is None else kt
    knee_qdot = float(qdot[2])
    prev_qdot = None if prev_state is None else prev_state.prev_qdot
    raw = knee_external_torque(float(currents[2]), knee_qdot, prev_qdot, dt, model, kt)
    if prev_state is None or dt is None:
        filtered = raw
        was = False
    else:
        tau = 1.0 / (2.0 * math.pi * config.low_pass_cutoff)
        alpha = dt / (dt + tau)
        filtered = prev_state.filtered + alpha * (raw - prev_state.filtered)
        was = prev_state.contact
    mag = abs(filtered)
    if was:
        contact = mag > config.torque_threshold - config.hysteresis
    else:
        contact = mag > config.torque_threshold
    return contact, filtered, ContactFilterState(filtered, contact, knee_qdot)


# ---------------------------------------------------------------------------
# controller

@dataclass
class Feedback:
    """What the controller sees each tick."""

    time: float
    base_position: np.ndarray
    base_orientation: np.ndarray
    base_linear_velocity: np.ndarray   # world
    base_angular_velocity: np.ndarray  # world
    q: np.ndarray                      # (4, 3)
    qdot: np.ndarray                   # (4, 3)
    currents: np.ndarray               # (4, 3)


@dataclass(frozen=True)
class ControllerConfig:
    swing_gains: SwingGains = field(default_factory=SwingGains)
    contact: ContactEstimatorConfig = field(default_factory=ContactEstimatorConfig)
    foothold_gain: float = 0.03
    friction: float = 0.6
    stance_kd: float = 0.5


def load_controller_config(path=None):
    if path is None:
        text = resources.files("quadsim.data").joinpath("controller.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    sg = doc.get("swing_gains", {})
    ce = doc.get("contact_estimator", {})
    return ControllerConfig(
        swing_gains=SwingGains(tuple(sg.get("kp_nm_per_rad", SwingGains.kp)),
                               tuple(sg.get("kd_nms_per_rad", SwingGains.kd))),
        contact=ContactEstimatorConfig(
            torque_threshold=ce.get("torque_threshold_nm", 3.0),
            low_pass_cutoff=ce.get("low_pass_cutoff_hz", 30.0),
            hysteresis=ce.get("hysteresis_nm", 0.5)),
        foothold_gain=doc.get("foothold_gain_s", 0.03),
        friction=doc.get("friction_estimate", 0.6),
        stance_kd=doc.get("stance_kd_nms_per_rad", 0.5),
    )


class Controller:
    """Stateful control loop for one robot (not re-entrant)."""

    def __init__(self, model, schedule, policy, terrain, motor, config=None,
                 command_velocity=(0.0, 0.0), control_dt=1.0 / 400.0):
        self.model = model
        self.schedule = schedule
        self.policy = policy
        self.terrain = terrain
        self.motor = motor
        self.config = config or ControllerConfig()
        self.command_velocity = np.array([float(command_velocity[0]), float(command_velocity[1])])
        self.dt = control_dt
        slope = terrain.slope_angle
        self.ref_quat = quat_from_axis_angle((0.0, 1.0, 0.0), -slope)
        self.ref_rot = quat_to_matrix(self.ref_quat)
        self.ref_conj = self.ref_quat * np.array([1.0, -1.0, -1.0, -1.0])
        self.up_terrain = self.ref_rot.T @ np.array([0.0, 0.0, 1.0])
        self.reductions = model.reductions
        self.gain = model.reductions * model.efficiencies
        self.filters = [None] * 4
        self.contact_estimate = np.zeros(4, dtype=bool)
        self.filtered_torque = np.zeros(4)
        self.was_stance = [True] * 4
        self.swing_start = [None] * 4
        self.ik_warnings = 0
        self.last_wrench = np.zeros(6)
        self.last_obs = np.zeros(OBS_DIM)

    # -- observation -------------------------------------------------------
    def observe(self, fb, phases):
        rel = quat_multiply(self.ref_conj, fb.base_orientation)
        roll, pitch, yaw = quat_to_euler(rel)
        rot = quat_to_matrix(fb.base_orientation)
        w_body = rot.T @ fb.base_angular_velocity
        v_ref = self.ref_rot.T @ fb.base_linear_velocity
        height = self.terrain.signed_distance(fb.base_position)
        obs = np.empty(OBS_DIM)
        obs[0:3] = roll, pitch, yaw
        obs[3:6] = w_body
        obs[6:9] = v_ref
        obs[9] = height - self.model.nominal_height
        obs[10:12] = self.command_velocity
        obs[12:15] = self.up_terrain
        for i, (phase, _) in enumerate(phases):
            obs[15 + 2 * i] = math.sin(2.0 * math.pi * phase)
            obs[16 + 2 * i] = math.cos(2.0 * math.pi * phase)
        return obs

    # -- one tick ----------------------------------------------------------
    def control_tick(self, fb):
        """Joint-side torque commands (4, 3) for the feedback sample ``fb``."""
        model = self.model
        phases = gaitmod.leg_phase(fb.time, self.schedule)
        obs = self.observe(fb, phases)
        shifts, wrench_ref = linear_policy(obs, self.policy)
        self.last_obs = obs
        force_w = self.ref_rot @ wrench_ref[:3]
        torque_w = self.ref_rot @ wrench_ref[3:]
        self.last_wrench = np.concatenate((force_w, torque_w))

        rot = quat_to_matrix(fb.base_orientation)
        feet_body = np.empty((4, 3))
        jacs = np.empty((4, 3, 3))
        for i, leg in enumerate(LEG_ORDER):
            feet_body[i], jacs[i] = fk_and_jacobian(fb.q[i], leg, model)
        feet_rel = feet_body @ rot.T
        feet_world = fb.base_position + feet_rel

        torques = np.zeros((4, 3))
        stance = [st for _, st in phases]
        stance_idx = [i for i in range(4) if stance[i]]
        if stance_idx:
            dist = distribute_forces(self.last_wrench, feet_rel[stance_idx], self.config.friction,
                                     self.terrain.normal)
            for f_world, i in zip(dist.forces, stance_idx):
                torques[i] = stance_torques(rot.T @ f_world, fb.q[i], LEG_ORDER[i], model, jacs[i])
                if self.config.stance_kd:
                    torques[i] -= self.config.stance_kd * fb.qdot[i]

        v_cmd_world = self.ref_rot @ np.array([self.command_velocity[0], self.command_velocity[1], 0.0])
        shifts_world = shifts @ self.ref_rot[:, :2].T
        for i, leg in enumerate(LEG_ORDER):
            if stance[i]:
                self.was_stance[i] = True
                continue
            if self.was_stance[i] or self.swing_start[i] is None:
                self.swing_start[i] = feet_world[i].copy()
                self.was_stance[i] = False
            torques[i] = self._swing_leg(i, leg, phases[i][0], fb, rot, v_cmd_world,
                                         shifts_world[i], jacs[i])

        self._update_contact(fb)
        return self._saturate(torques, fb)

    def _swing_leg(self, i, leg, phase, fb, rot, v_cmd_world, shift_world, jac):
        model = self.model
        sched = self.schedule
        s = gaitmod.swing_progress(phase, sched)
        t_left = (1.0 - s) * sched.swing_duration
        hip_world = fb.base_position + rot @ model.hip_offset(leg)
        hip_proj = self.terrain.project_to_surface(hip_world + v_cmd_world * t_left)
        target = gaitmod.foothold_target(v_cmd_world, fb.base_linear_velocity, sched.stance_duration,
                                         hip_proj, self.terrain, self.config.foothold_gain)
        target = self.terrain.project_to_surface(target + shift_world)
        p_des = gaitmod.swing_trajectory(s, self.swing_start[i], target, sched.swing_height)
        v_des = gaitmod.swing_velocity(s, self.swing_start[i], target, sched.swing_height,
                                       sched.swing_duration)
        p_body = rot.T @ (p_des - fb.base_position)
        try:
            q_des = inverse_kinematics(p_body, leg, model)
        except UnreachableError:
            self.ik_warnings += 1
            q_des = inverse_kinematics(project_reachable(p_body, leg, model), leg, model)
        q_des = np.clip(q_des, model.joint_limits.lower_array, model.joint_limits.upper_array)
        r = p_des - fb.base_position
        v_rel = rot.T @ (v_des - fb.base_linear_velocity - np.cross(fb.base_angular_velocity, r))
        try:
            qdot_des = np.linalg.solve(jac, v_rel)
        except np.linalg.LinAlgError:
            qdot_des = np.linalg.lstsq(jac, v_rel, rcond=None)[0]
        if not np.isfinite(qdot_des).all() or np.abs(qdot_des).max() > 50.0:
            qdot_des = np.zeros(3)
        return swing_torques(fb.q[i], fb.qdot[i], q_des, qdot_des, self.config.swing_gains)

    def _update_contact(self, fb):
        for i in range(4):
            contact, filtered, self.filters[i] = estimate_contact(
                fb.currents[i], fb.q[i], fb.qdot[i], self.model, self.config.contact,
                self.filters[i], self.dt, self.motor.kt)
            self.contact_estimate[i] = contact
            self.filtered_torque[i] = filtered

    def _saturate(self, torques, fb):
        cap = current_envelope(fb.qdot * self.reductions, self.motor) * self.motor.kt * self.gain
        return np.clip(torques, -cap, cap)
