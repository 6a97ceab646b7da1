"""Closed-loop experiment runner: simulator + controller + CAN transport + metrics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from quadsim import canbus
from quadsim import gait as gaitmod
from quadsim.actuator import load_actuator_config, time_to_trip
from quadsim.control import Controller, Feedback, load_controller_config, load_policy
from quadsim.morphology import JOINT_NAMES, LEG_ORDER, load_model
from quadsim.simworld import (
    Imu, SimulationFault, Terrain, World, initial_state, quat_multiply, quat_to_euler, quat_to_matrix)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
SCENARIOS = ("stand", "trot", "crawl")
# the crawl has no body sway, so its three-leg phases only stay stable when slow
DEFAULT_SPEED = {"stand": 0.0, "trot": 0.3, "crawl": 0.1}
FOOTFALL_QUIET = 0.020   # s of no contact before a touchdown counts as a footfall
MATCH_WINDOW = 0.020     # s
FALL_TILT = math.radians(30.0)

TRACE_COLUMNS = (
    ["time", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
    + [f"q_{leg}_{j}" for leg in LEG_ORDER for j in JOINT_NAMES]
    + [f"qd_{leg}_{j}" for leg in LEG_ORDER for j in JOINT_NAMES]
    + [f"i_{leg}_{j}" for leg in LEG_ORDER for j in JOINT_NAMES]
    + [f"temp_{leg}_{j}" for leg in LEG_ORDER for j in JOINT_NAMES]
    + [f"contact_{leg}" for leg in LEG_ORDER]
)


class ExperimentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str = "trot"
    duration: float = 10.0
    commanded_velocity: float | None = None  # m/s; None picks DEFAULT_SPEED[scenario]
    slope_deg: float = 0.0
    seed: int = 0
    model_config_path: str | None = None
    policy_path: str = "stabilizer"
    output_dir: str | None = None
    controller_config_path: str | None = None
    actuator_config_path: str | None = None
    period: float | None = None
    duty: float | None = None
    dt: float = 1e-3
    control_rate: float = 400.0
    trace_every: float = 0.01
    transport_delay: bool = False
    frame_trace: bool = False
    gyro_noise: float = 0.01        # rad/s, seeded by ``seed``
    orientation_noise: float = 0.002  # rad

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ExperimentConfigError(f"scenario must be one of {SCENARIOS}")
        if self.commanded_velocity is None:
            object.__setattr__(self, "commanded_velocity", DEFAULT_SPEED[self.scenario])
        if not self.duration > 0:
            raise ExperimentConfigError("duration must be > 0")
        if abs(self.slope_deg) > 30.0:
            raise ExperimentConfigError("|slope_deg| must be <= 30")
        if not 0 < self.dt <= 2e-3:
            raise ExperimentConfigError("dt must lie in (0, 2 ms]")
        if not self.control_rate > 0:
            raise ExperimentConfigError("control_rate must be > 0")
        if self.gyro_noise < 0 or self.orientation_noise < 0:
            raise ExperimentConfigError("noise levels must be >= 0")


@dataclass
class MetricsSummary:
    mean_forward_speed: float
    height_rms_error: float
    roll_pitch_rms: float
    fell: bool
    max_driver_temp: float
    energy_consumed: float
    contact_detection_latency_p95: float | None
    bus_utilization_max: float
    # supporting detail
    roll_rms: float = 0.0
    pitch_rms: float = 0.0
    footfalls: int = 0
    touchdown_detection_rate: float | None = None
    swing_false_positive_rate: float | None = None
    max_limit_excess: float = 0.0
    ik_warnings: int = 0
    simulation_fault: bool = False
    sim_time: float = 0.0


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    metrics: MetricsSummary
    trace: np.ndarray
    files: dict = field(default_factory=dict)

    @property
    def exit_code(self):
        return 0 if not (self.metrics.fell or self.metrics.simulation_fault) else 1


def summary_document(spec, metrics):
    spec_doc = {k: v for k, v in asdict(spec).items() if k != "output_dir"}
    return {"schema_version": SCHEMA_VERSION, "spec": spec_doc, "metrics": asdict(metrics)}


def summary_schema():
    return json.loads(resources.files("quadsim.data").joinpath("summary_schema.json").read_text())


def dumps_summary(doc):
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        return v
    return json.dumps(clean(doc), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# contact metrics

def _rising_edges(times, flags):
    flags = np.asarray(flags, dtype=bool)
    idx = np.flatnonzero(flags[1:] & ~flags[:-1]) + 1
    return [(times[i], i) for i in idx]


def contact_detection_metrics(gt_times, gt_flags, est_times, est_flags, swing_flags):
    """Footfall latency statistics and swing false-positive rate.

    ``gt_*`` sample the simulator ground truth (physics rate); ``est_*`` and
    ``swing_flags`` sample the estimator and the gait schedule (control rate),
    all shaped ``(n, 4)``.
    """
    gt_times = np.asarray(gt_times)
    est_times = np.asarray(est_times)
    t_end = est_times[-1] - MATCH_WINDOW if len(est_times) else -np.inf
    latencies = []
    for leg in range(4):
        gt = np.asarray(gt_flags)[:, leg]
        est_edges = [t for t, _ in _rising_edges(est_times, np.asarray(est_flags)[:, leg])]
        last_contact = -np.inf
        for i in range(1, len(gt)):
            if gt[i] and not gt[i - 1]:
                # footfalls too close to the end of the log cannot be matched yet
                if gt_times[i] - last_contact >= FOOTFALL_QUIET and gt_times[i] <= t_end:
                    t_gt = gt_times[i]
                    near = [t - t_gt for t in est_edges if abs(t - t_gt) <= MATCH_WINDOW]
                    latencies.append(min(near, key=abs) if near else math.inf)
            if gt[i]:
                last_contact = gt_times[i]
    lat = np.abs(np.array(latencies, dtype=float))
    if len(lat):
        p95 = float(np.percentile(lat, 95, method="higher"))
        rate = float(np.mean(lat <= MATCH_WINDOW))
    else:
        p95, rate = None, None
    # estimator says contact while the leg is scheduled in swing and truly airborne
    swing = np.asarray(swing_flags, dtype=bool)
    gt_at_est = _sample_at(gt_times, np.asarray(gt_flags), est_times)
    airborne = swing & ~gt_at_est
    fp = float(np.mean(np.asarray(est_flags)[airborne])) if airborne.any() else None
    return len(latencies), p95, rate, fp


def _sample_at(times, flags, query):
    idx = np.searchsorted(times, np.asarray(query) - 1e-12, side="left")
    idx = np.clip(idx, 0, len(times) - 1)
    return flags[idx]


# ---------------------------------------------------------------------------
# runner

class _Transport:
    """Carries telemetry and commands over the simulated buses (float32 on the wire)."""

    def __init__(self, topology, tick_period, frame_log=None):
        self.topology = topology
        self.tick_period = tick_period
        self.frame_log = frame_log
        self.max_utilization = 0.0
        self._frames = []

    def send_telemetry(self, t, msgs):
        out = []
        for bus, row in enumerate(msgs):
            decoded = []
            for node, msg in zip(self.topology.node_ids, row):
                payload = canbus.encode_telemetry(msg)
                self._frames.append(canbus.CanFrame(canbus.TELEMETRY_ID_BASE + node, payload, t, bus))
                decoded.append(canbus.decode_telemetry(payload))
            out.append(decoded)
        return out

    def send_commands(self, t, msgs):
        out = []
        for bus, row in enumerate(msgs):
            decoded = []
            for node, msg in zip(self.topology.node_ids, row):
                payload = canbus.encode_command(msg)
                self._frames.append(canbus.CanFrame(node, payload, t, bus))
                decoded.append(canbus.decode_command(payload))
            out.append(decoded)
        return out

    def close_tick(self, t):
        schedule = canbus.bus_transmit(self._frames, self.topology, self.tick_period, t)
        self._frames = []
        self.max_utilization = max(self.max_utilization, schedule.max_utilization)
        if self.frame_log is not None:
            for bus, deliveries in schedule.deliveries.items():
                for d in deliveries:
                    self.frame_log.append((d.delivered, bus, d.frame.arbitration_id, d.frame.payload))


def run_experiment(spec, write_outputs=True):
    """Run one closed-loop scenario and return its :class:`ExperimentResult`."""
    try:
        model = load_model(spec.model_config_path)
        act_cfg = load_actuator_config(spec.actuator_config_path)
        ctrl_cfg = load_controller_config(spec.controller_config_path)
        policy = load_policy(spec.policy_path)
    except (OSError, ValueError, KeyError) as exc:
        raise ExperimentConfigError(str(exc)) from exc

    terrain = Terrain.incline(spec.slope_deg)
    schedule = gaitmod.make_gait(spec.scenario, period=spec.period, duty=spec.duty)
    velocity = 0.0 if spec.scenario == "stand" else spec.commanded_velocity
    world = World(model, act_cfg.motor, act_cfg.active_thermal, terrain)
    control_dt = 1.0 / spec.control_rate
    controller = Controller(model, schedule, policy, terrain, act_cfg.motor, ctrl_cfg,
                            (velocity, 0.0), control_dt)
    topology = canbus.BusTopology()
    frame_log = [] if spec.frame_trace else None
    transport = _Transport(topology, control_dt, frame_log)
    imu = Imu(spec.seed, gyro_std=spec.gyro_noise, orientation_std=spec.orientation_noise)
    motor = act_cfg.motor
    kt = motor.kt
    gain = world.torque_gain

    state = initial_state(model, terrain)
    n_steps = int(round(spec.duration / spec.dt))
    trace_stride = max(1, int(round(spec.trace_every / spec.dt)))
    ctrl_ratio = spec.dt * spec.control_rate

    gt_times = np.empty(n_steps + 1)
    gt_flags = np.empty((n_steps + 1, 4), dtype=bool)
    est_times, est_flags, swing_flags = [], [], []
    trace_rows = []
    heights, rolls, pitches = [], [], []
    energy = 0.0
    max_excess = 0.0
    fell = False
    fault = None
    applied = np.zeros((4, 3))
    pending = np.zeros((4, 3))
    last_tick = -1
    start = state.base_position.copy()
    lower, upper = model.joint_limits.lower_array, model.joint_limits.upper_array
    ref_conj = controller.ref_conj

    def record(st):
        rel = quat_multiply(ref_conj, st.base_orientation)
        roll, pitch, _ = quat_to_euler(rel)
        h = terrain.signed_distance(st.base_position)
        heights.append(h - model.nominal_height)
        rolls.append(roll)
        pitches.append(pitch)
        return h, roll, pitch

    record(state)
    gt_times[0], gt_flags[0] = 0.0, True
    for k in range(n_steps):
        t = k * spec.dt
        tick = int(math.floor(k * ctrl_ratio + 1e-9))
        if tick != last_tick:
            last_tick = tick
            acts = state.actuators
            telemetry = [[canbus.TelemetryMsg(
                position=float(state.q[b, j]), velocity=float(state.qdot[b, j]),
                torque_estimate=float(kt * acts.current[b, j] * gain[j]),
                driver_temp=float(acts.driver_temp[b, j]),
                fault_code=int(bool(acts.tripped[b, j]))) for j in range(3)] for b in range(4)]
            tel = transport.send_telemetry(t, telemetry)
            reading = imu.read(state)
            fb = Feedback(
                time=t,
                base_position=state.base_position.copy(),
                base_orientation=reading.orientation,
                base_linear_velocity=state.base_linear_velocity.copy(),
                base_angular_velocity=quat_to_matrix(reading.orientation) @ reading.angular_velocity,
                q=np.array([[tel[b][j].position for j in range(3)] for b in range(4)]),
                qdot=np.array([[tel[b][j].velocity for j in range(3)] for b in range(4)]),
                currents=np.array([[tel[b][j].torque_estimate / (kt * gain[j]) for j in range(3)]
                                   for b in range(4)]),
            )
            torques = controller.control_tick(fb)
            commands = [[canbus.ActuatorCommandMsg(feedforward_torque=float(torques[b, j]))
                         for j in range(3)] for b in range(4)]
            decoded = transport.send_commands(t, commands)
            transport.close_tick(t)
            wire = np.array([[c.feedforward_torque for c in row] for row in decoded])
            if spec.transport_delay:
                applied, pending = pending, wire
            else:
                applied = pending = wire
            est_times.append(t)
            est_flags.append(controller.contact_estimate.copy())
            phases = gaitmod.leg_phase(t, schedule)
            swing_flags.append([not st for _, st in phases])
        try:
            new_state = world.step(state, applied, spec.dt)
        except SimulationFault as exc:
            fault = exc
            break
        acts = new_state.actuators
        rotor_power = acts.current * kt * acts.rotor_velocity + acts.current**2 * motor.phase_resistance
        energy += float(np.maximum(rotor_power, 0.0).sum()) * spec.dt
        max_excess = max(max_excess, float(np.max(lower - new_state.q)), float(np.max(new_state.q - upper)))
        state = new_state
        gt_times[k + 1] = state.time
        gt_flags[k + 1] = state.in_contact
        h, roll, pitch = record(state)
        if h < 0.5 * model.nominal_height or abs(roll) > FALL_TILT or abs(pitch) > FALL_TILT:
            fell = True
        if (k + 1) % trace_stride == 0:
            trace_rows.append(_trace_row(state))

    n_done = state.step_count
    gt_times, gt_flags = gt_times[:n_done + 1], gt_flags[:n_done + 1]
    footfalls, p95, rate, fp = contact_detection_metrics(
        gt_times, gt_flags, np.array(est_times), np.array(est_flags).reshape(-1, 4),
        np.array(swing_flags).reshape(-1, 4))
    sim_time = state.time
    disp = state.base_position - start
    speed_dir = controller.ref_rot[:, 0]
    rolls_a, pitches_a = np.array(rolls), np.array(pitches)
    metrics = MetricsSummary(
        mean_forward_speed=float(disp @ speed_dir / sim_time) if sim_time > 0 else 0.0,
        height_rms_error=float(np.sqrt(np.mean(np.square(heights)))),
        roll_pitch_rms=float(np.sqrt(np.mean(rolls_a**2 + pitches_a**2))),
        fell=bool(fell or fault is not None),
        max_driver_temp=float(np.max(state.actuators.driver_temp)),
        energy_consumed=energy,
        contact_detection_latency_p95=p95,
        bus_utilization_max=transport.max_utilization,
        roll_rms=float(np.sqrt(np.mean(rolls_a**2))),
        pitch_rms=float(np.sqrt(np.mean(pitches_a**2))),
        footfalls=footfalls,
        touchdown_detection_rate=rate,
        swing_false_positive_rate=fp,
        max_limit_excess=max(0.0, max_excess),
        ik_warnings=controller.ik_warnings,
        simulation_fault=fault is not None,
        sim_time=sim_time,
    )
    trace = np.array(trace_rows) if trace_rows else np.empty((0, len(TRACE_COLUMNS)))
    result = ExperimentResult(spec, metrics, trace)
    if write_outputs and spec.output_dir:
        out = Path(spec.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trace(out / "trace.csv", trace)
        text = dumps_summary(summary_document(spec, metrics))
        jsonschema.validate(json.loads(text), summary_schema())
        (out / "summary.json").write_text(text)
        result.files = {"trace": str(out / "trace.csv"), "summary": str(out / "summary.json")}
        if frame_log is not None:
            canbus.write_frame_trace(out / "frames.csv", frame_log)
            result.files["frames"] = str(out / "frames.csv")
        if fault is not None:
            (out / "fault_snapshot.json").write_text(
                json.dumps({"message": str(fault), "state": fault.snapshot}, indent=1))
            result.files["fault_snapshot"] = str(out / "fault_snapshot.json")
    if fault is not None:
        log.error("simulation fault: %s", fault)
    return result


def _trace_row(st):
    a = st.actuators
    return np.concatenate((
        [st.time], st.base_position, st.base_orientation, st.base_linear_velocity,
        st.base_angular_velocity, st.q.ravel(), st.qdot.ravel(), np.ravel(a.current),
        np.ravel(a.driver_temp), st.in_contact.astype(float),
    ))


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in trace:
            writer.writerow([repr(float(v)) for v in row])


def read_trace(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return header, np.array(rows).reshape(-1, len(header))


# ---------------------------------------------------------------------------
# thermal bench

@dataclass
class ThermalBenchResult:
    heatsink: bool
    power: float
    time_to_trip: float | None
    horizon: float
    times: np.ndarray
    driver_temp: np.ndarray
    sink_temp: np.ndarray


def thermal_bench(heatsink=True, power=None, actuator_config_path=None, dt=0.1, expected=None):
    """Constant-power soak from ambient until the driver trips (or 2x the expected time)."""
    cfg = load_actuator_config(actuator_config_path)
    power = cfg.bench_power if power is None else power
    if not power > 0:
        raise ValueError("power must be > 0")
    tparams = cfg.thermal["heatsink" if heatsink else "no_heatsink"]
    if expected is None:
        expected = 1800.0 if heatsink else 600.0
    steady = tparams.ambient + power * (tparams.driver_to_sink_resistance
                                        + tparams.sink_to_ambient_resistance)
    horizon = 2.0 * expected
    if steady >= tparams.trip_temperature:
        # lower power trips later; steady >= trip bounds this stretch
        horizon *= max(1.0, cfg.bench_power / power)
    trip, times, td, ts = time_to_trip(power, tparams, dt=dt, horizon=horizon, record_every=max(1, int(1.0 / dt)))
    return ThermalBenchResult(heatsink, power, trip, horizon, times, td, ts)


def write_thermal_trace(path, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "driver_temp_c", "sink_temp_c"])
        for t, a, b in zip(result.times, result.driver_temp, result.sink_temp):
            writer.writerow([f"{t:.3f}", f"{a:.6f}", f"{b:.6f}"])
