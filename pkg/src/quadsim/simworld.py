"""Floating-base simulation with spring-damper point-foot contact on planes.

The base carries the whole robot mass (legs are treated as massless links);
each joint only has the reflected inertia of its rotor.  Contact forces act on
the base directly and on the joints through the leg Jacobian.  Because the
reflected inertias are tiny compared with the contact stiffness, the joint
velocity update linearises the contact spring and damper implicitly, which
keeps the fixed 1 ms step stable.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from quadsim import actuator as act
from quadsim.kinematics import fk_and_jacobian
from quadsim.morphology import LEG_ORDER

GRAVITY = 9.81
MAX_DT = 2e-3
_MAX_CONTACT_ITERS = 4


class SimulationFault(RuntimeError):
    """Raised when the state stops being finite; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot):
        self.snapshot = snapshot
        super().__init__(message)


@dataclass(frozen=True)
class Terrain:
    kind: str = "flat"
    slope_angle: float = 0.0
    friction_coefficient: float = 0.6
    contact_stiffness: float = 30_000.0
    contact_damping: float = 1_000.0
    tangential_damping: float = 20_000.0

    def __post_init__(self):
        if self.kind not in ("flat", "incline"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "flat" and self.slope_angle != 0.0:
            raise ValueError("flat terrain must have zero slope")
        if abs(self.slope_angle) > math.radians(30.0) + 1e-12:
            raise ValueError("slope_angle must lie within +-30 deg")
        if self.friction_coefficient < 0:
            raise ValueError("friction must be >= 0")
        if not self.contact_stiffness > 0:
            raise ValueError("contact stiffness must be > 0")
        if self.contact_damping < 0 or self.tangential_damping < 0:
            raise ValueError("damping must be >= 0")

    @classmethod
    def incline(cls, slope_deg, **kwargs):
        if slope_deg == 0:
            return cls(**kwargs)
        return cls(kind="incline", slope_angle=math.radians(slope_deg), **kwargs)

    @property
    def normal(self):
        s = self.slope_angle
        return np.array([-math.sin(s), 0.0, math.cos(s)])

    @property
    def uphill(self):
        s = self.slope_angle
        return np.array([math.cos(s), 0.0, math.sin(s)])

    def height(self, x, y=0.0):
        return math.tan(self.slope_angle) * x

    def signed_distance(self, p):
        """Height of ``p`` above the plane, measured along the normal."""
        s = self.slope_angle
        return -math.sin(s) * p[0] + math.cos(s) * p[2]

    def project_to_surface(self, p):
        p = np.array(p, dtype=float)
        return p - self.signed_distance(p) * self.normal


def ground_height_and_normal(x, y, terrain):
    return terrain.height(x, y), terrain.normal


def contact_force(foot_pos, foot_vel, terrain):
    """Ground reaction on a point foot: spring-damper normal, capped viscous tangential.

    This is the explicit force law; :func:`step` integrates the same law
    implicitly.
    """
    foot_pos = np.asarray(foot_pos, dtype=float)
    foot_vel = np.asarray(foot_vel, dtype=float)
    normal = terrain.normal
    depth = -terrain.signed_distance(foot_pos)
    if depth <= 0.0:
        return np.zeros(3)
    vn = float(normal @ foot_vel)
    fn = terrain.contact_stiffness * depth - terrain.contact_damping * vn
    if fn <= 0.0:
        return np.zeros(3)
    f_t = -terrain.tangential_damping * (foot_vel - vn * normal)
    cap = terrain.friction_coefficient * fn
    mag = math.sqrt(float(f_t @ f_t))
    if mag > cap:
        f_t *= cap / mag
    return fn * normal + f_t


# ---------------------------------------------------------------------------
# rotations

def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


def quat_from_rotvec(rv):
    angle = math.sqrt(float(rv @ rv))
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / math.sqrt(float(q @ q))
    return quat_from_axis_angle(rv / angle, angle)


def quat_to_euler(q):
    """(roll, pitch, yaw) in the z-y-x convention."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2 * (w * y - z * x))))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


# ---------------------------------------------------------------------------
# state

@dataclass
class SimState:
    base_position: np.ndarray
    base_orientation: np.ndarray          # unit quaternion (w, x, y, z)
    base_linear_velocity: np.ndarray      # world frame
    base_angular_velocity: np.ndarray     # world frame
    q: np.ndarray                         # (4, 3) joint angles
    qdot: np.ndarray                      # (4, 3)
    actuators: act.ActuatorState          # fields shaped (4, 3)
    time: float = 0.0
    in_contact: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=bool))
    foot_forces: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    base_linear_acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step_count: int = 0

    def copy(self):
        return SimState(
            self.base_position.copy(), self.base_orientation.copy(),
            self.base_linear_velocity.copy(), self.base_angular_velocity.copy(),
            self.q.copy(), self.qdot.copy(), self.actuators.copy(), self.time,
            self.in_contact.copy(), self.foot_forces.copy(),
            self.base_linear_acceleration.copy(), self.step_count,
        )

    @property
    def rotation(self):
        return quat_to_matrix(self.base_orientation)

    def leg_states(self):
        from quadsim.kinematics import LegState
        return [LegState(leg, self.q[i].copy(), self.qdot[i].copy()) for i, leg in enumerate(LEG_ORDER)]

    def snapshot(self):
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, act.ActuatorState):
                v = {g.name: np.asarray(getattr(v, g.name)).tolist() for g in dataclasses.fields(v)}
            elif isinstance(v, np.ndarray):
                v = v.tolist()
            d[f.name] = v
        return d


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    gravity: float = GRAVITY
    enforce_limits: bool = True


class World:
    """Model-dependent constants cached for the step loop."""

    def __init__(self, model, motor=None, thermal=None, terrain=None):
        cfg = act.load_actuator_config()
        self.model = model
        self.motor = motor or cfg.motor
        self.thermal = thermal or cfg.active_thermal
        self.terrain = terrain or Terrain()
        self.reductions = model.reductions
        self.efficiencies = model.efficiencies
        self.torque_gain = self.reductions * self.efficiencies  # rotor -> joint
        self.joint_inertia = self.reductions**2 * model.rotor_inertia
        self.inertia_body = model.base_inertia()
        self.inv_inertia_body = 1.0 / self.inertia_body
        self.lower = model.joint_limits.lower_array
        self.upper = model.joint_limits.upper_array

    def step(self, state, joint_torque_commands, dt=1e-3, config=None):
        return step(state, joint_torque_commands, self.terrain, self.model, dt, world=self, config=config)


def initial_state(model, terrain=None, height=None, q=None, ambient=25.0, world=None):
    """Robot at rest, body parallel to the terrain.

    With ``q`` omitted the legs are solved so the feet sit on the surface
    compressed by the static share of the weight, shifted downhill so the
    gravity line through the centre of mass passes through the foot centroid.
    """
    from quadsim.kinematics import inverse_kinematics

    terrain = terrain or Terrain()
    height = model.nominal_height if height is None else height
    quat = quat_from_axis_angle((0.0, 1.0, 0.0), -terrain.slope_angle)
    origin_offset = height * terrain.normal
    base_position = origin_offset
    if q is None:
        sink = model.total_mass * GRAVITY * math.cos(terrain.slope_angle) / (4 * terrain.contact_stiffness)
        qs = []
        for leg in LEG_ORDER:
            p = model.hip_offset(leg).copy()
            p[0] -= height * math.tan(terrain.slope_angle)
            p[2] -= height + sink
            qs.append(inverse_kinematics(p, leg, model))
        q = np.array(qs)
    q = np.asarray(q, dtype=float).reshape(4, 3)
    reductions = model.reductions
    acts = act.ActuatorState.at_ambient(ambient, (4, 3))
    acts.rotor_angle = q * reductions
    return SimState(
        base_position=np.array(base_position, dtype=float),
        base_orientation=quat,
        base_linear_velocity=np.zeros(3),
        base_angular_velocity=np.zeros(3),
        q=q.copy(),
        qdot=np.zeros((4, 3)),
        actuators=acts,
    )


def foot_kinematics(state, model, rotation=None):
    """World-frame foot positions, body-frame Jacobians and foot positions."""
    rot = state.rotation if rotation is None else rotation
    feet_body = np.empty((4, 3))
    jacs = np.empty((4, 3, 3))
    for i, leg in enumerate(LEG_ORDER):
        feet_body[i], jacs[i] = fk_and_jacobian(state.q[i], leg, model)
    feet_world = state.base_position + feet_body @ rot.T
    return feet_world, feet_body, jacs


def step(state, joint_torque_commands, terrain, model, dt, world=None, config=None):
    """Advance the simulation by one step of ``dt`` seconds.

    Contact forces, gravity and actuator torques are integrated with a
    linearly implicit Euler step: the contact spring-damper is linearised
    about the current state so base and joint velocities are solved together.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}] s")
    world = world or World(model, terrain=terrain)
    config = config or SimConfig(dt=dt)
    g = config.gravity
    tau_cmd = np.asarray(joint_torque_commands, dtype=float).reshape(4, 3)

    rot = quat_to_matrix(state.base_orientation)
    v, w = state.base_linear_velocity, state.base_angular_velocity
    normal = terrain.normal

    # (1) foot kinematics and penetration
    feet_world, _, jacs = foot_kinematics(state, model, rot)
    k_n, c_n, c_t = terrain.contact_stiffness, terrain.contact_damping, terrain.tangential_damping
    mu = terrain.friction_coefficient
    g_n = c_n + dt * k_n
    nn = np.outer(normal, normal)
    tt = np.eye(3) - nn
    in_contact = np.zeros(4, dtype=bool)
    maps = [None] * 4
    depth = np.zeros(4)
    for i in range(4):
        depth[i] = -terrain.signed_distance(feet_world[i])
        if depth[i] <= 0.0:
            continue
        in_contact[i] = True
        r = feet_world[i] - state.base_position
        a = np.zeros((3, 18))
        a[:, :3] = np.eye(3)
        a[:, 3:6] = -_skew(r)
        a[:, 6 + 3 * i:9 + 3 * i] = rot @ jacs[i]
        maps[i] = a

    # (2) actuator torques
    acts = state.actuators
    rotor_cmd = tau_cmd / world.torque_gain
    rotor_torque, acts = act.apply_torque_command(rotor_cmd, acts, world.motor, dt)
    tau = rotor_torque * world.torque_gain

    # (3) linearly implicit solve for u = (v, w, qdot).  Each touching foot
    #     contributes f_i = c_i - B_i u, depending on its mode: sticking
    #     (viscous tangential), sliding (force on the friction cone along a
    #     fixed direction) or separating (no force).  Modes are re-checked
    #     against the solution; after a few free passes they may only move
    #     stick -> slide -> off, which always terminates with every active
    #     foot pressing on the ground.
    mass = model.total_mass
    inertia_world = rot @ np.diag(world.inertia_body) @ rot.T
    inertia_j = world.joint_inertia
    b = model.joint_viscous_friction
    base_mat = np.zeros((18, 18))
    base_mat[:3, :3] = np.eye(3) * (mass / dt)
    base_mat[3:6, 3:6] = inertia_world / dt
    base_rhs = np.empty(18)
    base_rhs[:3] = mass * v / dt
    base_rhs[2] -= mass * g
    base_rhs[3:6] = inertia_world @ w / dt
    for i in range(4):
        sl = slice(6 + 3 * i, 9 + 3 * i)
        base_mat[sl, sl] = np.diag(inertia_j / dt + b)
        base_rhs[sl] = inertia_j * state.qdot[i] / dt + tau[i]

    modes = ["stick" if in_contact[i] else "off" for i in range(4)]
    slide_dir = [None] * 4
    for it in range(_MAX_CONTACT_ITERS + 2 * 4 + 1):
        settling = it >= _MAX_CONTACT_ITERS
        mat = base_mat.copy()
        rhs = base_rhs.copy()
        terms = [None] * 4
        for i in range(4):
            if modes[i] == "off":
                continue
            a = maps[i]
            if modes[i] == "stick":
                c = k_n * depth[i] * normal
                bm = (g_n * nn + c_t * tt) @ a
            else:
                e = normal + mu * slide_dir[i]
                c = k_n * depth[i] * e
                bm = np.outer(e, g_n * normal) @ a
            mat += a.T @ bm
            rhs += a.T @ c
            terms[i] = (c, bm)
        u = np.linalg.solve(mat, rhs)
        changed = False
        for i in range(4):
            if not in_contact[i]:
                continue
            a = maps[i]
            fn = k_n * depth[i] - g_n * float(normal @ (a @ u))
            if fn <= 0.0:
                changed |= modes[i] != "off"
                modes[i] = "off"
                continue
            if modes[i] == "off":
                if not settling:
                    modes[i] = "stick"
                    changed = True
                continue
            v_t = tt @ (a @ u)
            if modes[i] == "stick":
                f_t = -c_t * v_t
                mag = math.sqrt(float(f_t @ f_t))
                if mag > mu * fn:
                    modes[i] = "slide"
                    slide_dir[i] = f_t / mag
                    changed = True
            elif not settling and float(v_t @ slide_dir[i]) > 0.0:
                # the foot would move along the friction force: it sticks
                modes[i] = "stick"
                changed = True
        if not changed:
            break
    v_new = u[:3]
    w_mid = u[3:6]
    qdot_new = u[6:].reshape(4, 3)
    forces = np.zeros((4, 3))
    for i in range(4):
        if terms[i] is not None:
            c, bm = terms[i]
            forces[i] = c - bm @ u

    # (4) pose; angular momentum is carried in the world frame
    ang_mom = inertia_world @ w_mid
    quat = quat_multiply(quat_from_rotvec(w_mid * dt), state.base_orientation)
    quat /= math.sqrt(float(quat @ quat))
    rot_new = quat_to_matrix(quat)
    w_new = rot_new @ (world.inv_inertia_body * (rot_new.T @ ang_mom))
    p_new = state.base_position + dt * v_new
    q_new = state.q + dt * qdot_new

    # (5) hard stops
    if config.enforce_limits:
        below = q_new < world.lower
        above = q_new > world.upper
        if below.any() or above.any():
            q_new = np.clip(q_new, world.lower, world.upper)
            qdot_new = np.where(below & (qdot_new < 0), 0.0, qdot_new)
            qdot_new = np.where(above & (qdot_new > 0), 0.0, qdot_new)

    # (6) actuator electrical and thermal state
    acts = dataclasses.replace(acts, rotor_angle=q_new * world.reductions,
                               rotor_velocity=qdot_new * world.reductions)
    power = act.electrical_power(acts.current, world.motor)
    acts = act.thermal_step(power, acts, world.thermal, dt)

    new = SimState(
        base_position=p_new,
        base_orientation=quat,
        base_linear_velocity=v_new,
        base_angular_velocity=w_new,
        q=q_new,
        qdot=qdot_new,
        actuators=acts,
        time=state.time + dt,
        in_contact=in_contact,
        foot_forces=forces,
        base_linear_acceleration=(v_new - v) / dt,
        step_count=state.step_count + 1,
    )
    if not (np.isfinite(p_new).all() and np.isfinite(v_new).all() and np.isfinite(w_new).all()
            and np.isfinite(quat).all() and np.isfinite(q_new).all() and np.isfinite(qdot_new).all()):
        raise SimulationFault(f"non-finite state at t={new.time:.4f} s", state.snapshot())
    return new


# ---------------------------------------------------------------------------
# IMU

@dataclass(frozen=True)
class ImuReading:
    orientation: np.ndarray
    angular_velocity: np.ndarray   # body frame
    specific_force: np.ndarray     # body frame


class Imu:
    """IMU with optional zero-mean Gaussian noise (off by default)."""

    def __init__(self, seed=0, gyro_std=0.0, accel_std=0.0, orientation_std=0.0, gravity=GRAVITY):
        self.rng = np.random.default_rng(seed)
        self.gyro_std = gyro_std
        self.accel_std = accel_std
        self.orientation_std = orientation_std
        self.gravity = gravity

    def read(self, state):
        rot = state.rotation
        omega = rot.T @ state.base_angular_velocity
        accel = state.base_linear_acceleration - (0.0, 0.0, -self.gravity)
        f_body = rot.T @ accel
        quat = state.base_orientation.copy()
        if self.gyro_std > 0:
            omega = omega + self.rng.normal(0.0, self.gyro_std, 3)
        if self.accel_std > 0:
            f_body = f_body + self.rng.normal(0.0, self.accel_std, 3)
        if self.orientation_std > 0:
            quat = quat_multiply(quat, quat_from_rotvec(self.rng.normal(0.0, self.orientation_std, 3)))
            quat /= np.linalg.norm(quat)
        return ImuReading(quat, omega, f_body)


def imu_readout(state, noise_seed=None, gyro_std=0.0, accel_std=0.0, orientation_std=0.0):
    """One noise-free (or seeded-noise) IMU sample of ``state``."""
    return Imu(0 if noise_seed is None else noise_seed, gyro_std, accel_std, orientation_std).read(state)


def mechanical_energy(state, model, terrain, world=None, gravity=GRAVITY):
    """Kinetic + gravitational + contact-spring energy (J)."""
    world = world or World(model, terrain=terrain)
    rot = state.rotation
    w_body = rot.T @ state.base_angular_velocity
    v = state.base_linear_velocity
    kinetic = 0.5 * model.total_mass * float(v @ v) + 0.5 * float(w_body @ (world.inertia_body * w_body))
    kinetic += 0.5 * float(np.sum(world.joint_inertia * state.qdot**2))
    potential = model.total_mass * gravity * state.base_position[2]
    feet_world, _, _ = foot_kinematics(state, model, rot)
    spring = 0.0
    for p in feet_world:
        depth = -terrain.signed_distance(p)
        if depth > 0:
            spring += 0.5 * terrain.contact_stiffness * depth * depth
    return kinetic + potential + spring
