"""Quasi-direct-drive actuator model: electrical envelope and two-node thermal network.

All functions broadcast, so an :class:`ActuatorState` may hold scalars for a
single actuator or ``(4, 3)`` arrays for the whole robot.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from quadsim.morphology import joint_reduction


class ActuatorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MotorParams:
    kv: float = 100.0                 # rpm/V
    phase_resistance: float = 0.12    # ohm
    current_limit: float = 40.0       # A
    bus_voltage: float = 22.2         # V
    rotor_inertia: float = 1.2e-4     # kg m^2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ActuatorConfigError(f"{f.name} must be > 0")

    @property
    def kt(self):
        return torque_constant(self.kv)


@dataclass(frozen=True)
class ThermalParams:
    driver_capacitance: float          # J/K
    sink_capacitance: float            # J/K
    driver_to_sink_resistance: float   # K/W
    sink_to_ambient_resistance: float  # K/W
    ambient: float = 25.0              # degC
    trip_temperature: float = 80.0     # degC

    def __post_init__(self):
        for name in ("driver_capacitance", "sink_capacitance",
                     "driver_to_sink_resistance", "sink_to_ambient_resistance"):
            if not getattr(self, name) > 0:
                raise ActuatorConfigError(f"{name} must be > 0")
        if not self.trip_temperature > self.ambient:
            raise ActuatorConfigError("trip_temperature must exceed ambient")

    def time_constants(self):
        """Time constants (s) of the two thermal modes, slowest first."""
        a = np.array([
            [-1 / (self.driver_capacitance * self.driver_to_sink_resistance),
             1 / (self.driver_capacitance * self.driver_to_sink_resistance)],
            [1 / (self.sink_capacitance * self.driver_to_sink_resistance),
             -1 / (self.sink_capacitance * self.driver_to_sink_resistance)
             - 1 / (self.sink_capacitance * self.sink_to_ambient_resistance)],
        ])
        return np.sort(-1.0 / np.linalg.eigvals(a).real)[::-1]


@dataclass
class ActuatorState:
    rotor_angle: np.ndarray | float = 0.0
    rotor_velocity: np.ndarray | float = 0.0
    current: np.ndarray | float = 0.0
    driver_temp: np.ndarray | float = 25.0
    sink_temp: np.ndarray | float = 25.0
    tripped: np.ndarray | bool = False

    @classmethod
    def at_ambient(cls, ambient=25.0, shape=()):
        zeros = np.zeros(shape)
        return cls(zeros.copy(), zeros.copy(), zeros.copy(),
                   np.full(shape, ambient), np.full(shape, ambient), np.zeros(shape, dtype=bool))

    def copy(self):
        return ActuatorState(*(np.copy(getattr(self, f.name)) for f in dataclasses.fields(self)))


def torque_constant(kv):
    """Torque constant in Nm/A from a speed constant in rpm/V."""
    if not kv > 0:
        raise ActuatorConfigError(f"kv must be > 0, got {kv}")
    return 60.0 / (2.0 * math.pi * kv)


def current_envelope(rotor_velocity, params):
    """Largest current magnitude available at a rotor speed (A)."""
    kt = params.kt
    back_emf_limit = np.maximum(0.0, (params.bus_voltage - kt * np.abs(rotor_velocity))
                                / params.phase_resistance)
    return np.minimum(params.current_limit, back_emf_limit)


def apply_torque_command(cmd, state, params, dt):
    """Saturate a rotor-side torque command; returns (achieved torque, new state).

    Only the current changes; the simulator owns rotor motion and temperature.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    kt = params.kt
    i_max = current_envelope(state.rotor_velocity, params)
    current = np.clip(np.asarray(cmd, dtype=float) / kt, -i_max, i_max)
    current = np.where(state.tripped, 0.0, current)
    new = dataclasses.replace(state, current=current)
    return kt * current, new


def rotor_torque_capacity(rotor_velocity, params):
    return params.kt * current_envelope(rotor_velocity, params)


def joint_torque_capacity(joint, model, params, joint_velocity):
    """Joint-side torque available at ``joint_velocity`` (rad/s)."""
    ratio = float(joint_reduction(joint, model.transmissions[joint]))
    eta = model.transmissions[joint].efficiency
    return rotor_torque_capacity(ratio * np.asarray(joint_velocity, dtype=float), params) * ratio * eta


def reflected_inertia(rotor_inertia, reduction):
    if not (rotor_inertia > 0 and reduction > 0):
        raise ValueError("rotor inertia and reduction must be positive")
    return reduction**2 * rotor_inertia


def electrical_power(current, params, rotor_velocity=None, torque=None):
    """Joule heating (W) in the lumped winding + driver resistance."""
    current = np.asarray(current, dtype=float)
    return current * current * params.phase_resistance


def thermal_step(power_dissipated, state, tparams, dt):
    """Explicit-Euler step of the driver/sink RC network."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    td, ts = state.driver_temp, state.sink_temp
    q_ds = (td - ts) / tparams.driver_to_sink_resistance
    q_sa = (ts - tparams.ambient) / tparams.sink_to_ambient_resistance
    td_new = td + dt * (power_dissipated - q_ds) / tparams.driver_capacitance
    ts_new = ts + dt * (q_ds - q_sa) / tparams.sink_capacitance
    tripped = np.logical_or(state.tripped, td_new >= tparams.trip_temperature)
    return dataclasses.replace(state, driver_temp=td_new, sink_temp=ts_new, tripped=tripped)


def reset_trip(state):
    return dataclasses.replace(state, tripped=np.zeros_like(np.asarray(state.tripped), dtype=bool))


def time_to_trip(power, tparams, dt=0.5, horizon=7200.0, record_every=1):
    """Integrate at constant power from ambient until the driver trips.

    Returns ``(time or None, times, driver temps, sink temps)``.
    """
    td = ts = tparams.ambient
    times, tds, tss = [0.0], [td], [ts]
    n_steps = int(math.ceil(horizon / dt))
    c_d, c_s = tparams.driver_capacitance, tparams.sink_capacitance
    r_ds, r_sa, amb = tparams.driver_to_sink_resistance, tparams.sink_to_ambient_resistance, tparams.ambient
    for n in range(1, n_steps + 1):
        q_ds = (td - ts) / r_ds
        q_sa = (ts - amb) / r_sa
        td, ts = td + dt * (power - q_ds) / c_d, ts + dt * (q_ds - q_sa) / c_s
        if n % record_every == 0:
            times.append(n * dt)
            tds.append(td)
            tss.append(ts)
        if td >= tparams.trip_temperature:
            if n % record_every:
                times.append(n * dt)
                tds.append(td)
                tss.append(ts)
            return n * dt, np.array(times), np.array(tds), np.array(tss)
    return None, np.array(times), np.array(tds), np.array(tss)


@dataclass(frozen=True)
class ActuatorConfig:
    motor: MotorParams
    thermal: dict  # profile name -> ThermalParams
    bench_power: float
    active_profile: str = "heatsink"

    @property
    def active_thermal(self):
        return self.thermal[self.active_profile]


def load_actuator_config(path=None):
    if path is None:
        text = resources.files("quadsim.data").joinpath("actuator.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    try:
        m = doc["motor"]
        motor = MotorParams(
            kv=float(m["kv_rpm_per_v"]),
            phase_resistance=float(m["phase_resistance_ohm"]),
            current_limit=float(m["current_limit_a"]),
            bus_voltage=float(m["bus_voltage_v"]),
            rotor_inertia=float(m["rotor_inertia_kgm2"]),
        )
        thermal = {}
        for name, t in doc["thermal_profiles"].items():
            thermal[name] = ThermalParams(
                driver_capacitance=float(t["driver_capacitance_j_per_k"]),
                sink_capacitance=float(t["sink_capacitance_j_per_k"]),
                driver_to_sink_resistance=float(t["driver_to_sink_resistance_k_per_w"]),
                sink_to_ambient_resistance=float(t["sink_to_ambient_resistance_k_per_w"]),
                ambient=float(t["ambient_c"]),
                trip_temperature=float(t["trip_temperature_c"]),
            )
        return ActuatorConfig(motor=motor, thermal=thermal,
                              bench_power=float(doc["bench_power_w"]),
                              active_profile=doc.get("active_profile", "heatsink"))
    except KeyError as exc:
        raise ActuatorConfigError(f"missing field {exc.args[0]}") from None
