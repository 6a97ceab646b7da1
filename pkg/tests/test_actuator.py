import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsim.actuator import (
    ActuatorConfigError, ActuatorState, MotorParams, ThermalParams, apply_torque_command,
    current_envelope, electrical_power, joint_torque_capacity, load_actuator_config,
    reflected_inertia, reset_trip, thermal_step, time_to_trip, torque_constant)

MOTOR = MotorParams()
KT = 60.0 / (2.0 * math.pi * 100.0)


@pytest.fixture(scope="module")
def thermal():
    return load_actuator_config().thermal


def test_torque_constant():
    assert torque_constant(100) == pytest.approx(0.095493, abs=5e-7)
    assert torque_constant(60 / (2 * math.pi)) == pytest.approx(1.0, rel=1e-15)
    assert torque_constant(50) == pytest.approx(2 * torque_constant(100), rel=1e-15)
    for bad in (0, -10):
        with pytest.raises(ActuatorConfigError):
            torque_constant(bad)


def test_motor_params_positive():
    with pytest.raises(ActuatorConfigError):
        MotorParams(phase_resistance=0.0)


def test_command_within_limits_passes_through():
    tau, st_new = apply_torque_command(1.5, ActuatorState(), MOTOR, 1e-3)
    assert tau == pytest.approx(1.5, rel=1e-14)
    assert st_new.current == pytest.approx(1.5 / KT)


def test_command_saturates_at_current_limit():
    tau, st_new = apply_torque_command(10.0, ActuatorState(), MOTOR, 1e-3)
    assert tau == pytest.approx(KT * 40.0, rel=1e-14)
    assert round(float(tau), 2) == 3.82
    assert st_new.current == pytest.approx(40.0)


def test_no_load_speed_leaves_no_torque():
    w0 = MOTOR.bus_voltage / KT
    tau, _ = apply_torque_command(2.0, ActuatorState(rotor_velocity=w0), MOTOR, 1e-3)
    assert tau == pytest.approx(0.0, abs=1e-12)
    tau, _ = apply_torque_command(2.0, ActuatorState(rotor_velocity=1.5 * w0), MOTOR, 1e-3)
    assert tau == 0.0


def test_tripped_actuator_outputs_nothing():
    tau, _ = apply_torque_command(1.0, ActuatorState(tripped=True), MOTOR, 1e-3)
    assert tau == 0.0


def test_apply_rejects_bad_dt():
    with pytest.raises(ValueError):
        apply_torque_command(1.0, ActuatorState(), MOTOR, 0.0)


@settings(max_examples=300, deadline=None)
@given(cmd=st.floats(-50, 50), omega=st.floats(-400, 400))
def test_achieved_never_exceeds_command_or_envelope(cmd, omega):
    tau, _ = apply_torque_command(cmd, ActuatorState(rotor_velocity=omega), MOTOR, 1e-3)
    assert abs(tau) <= abs(cmd) + 1e-12
    assert abs(tau) <= KT * MOTOR.current_limit + 1e-12
    assert tau * cmd >= 0


def test_knee_stall_torque(model):
    cap = float(joint_torque_capacity("knee", model, MOTOR, 0.0))
    assert cap == pytest.approx(KT * 40.0 * (90 / 11) * 0.90, abs=1e-6)
    assert round(cap, 2) == 28.13


def test_hip_knee_capacity_ratio(model):
    knee = joint_torque_capacity("knee", model, MOTOR, 0.0)
    hip = joint_torque_capacity("hip", model, MOTOR, 0.0)
    assert knee / hip == pytest.approx(15 / 11, rel=1e-14)


def test_capacity_non_increasing_in_speed(model):
    speeds = np.linspace(0.0, 40.0, 4001)
    for joint in ("abad", "hip", "knee"):
        cap = joint_torque_capacity(joint, model, MOTOR, speeds)
        assert np.all(np.diff(cap) <= 0)
        np.testing.assert_array_equal(cap, joint_torque_capacity(joint, model, MOTOR, -speeds))


def test_envelope_piecewise_linear_and_continuous():
    w = np.linspace(0, 300, 30001)
    i = current_envelope(w, MOTOR)
    assert np.max(np.abs(np.diff(i))) < 0.01
    # second differences vanish except at the two corners
    kinks = np.flatnonzero(np.abs(np.diff(i, 2)) > 1e-9)
    assert len(kinks) <= 4


def test_reflected_inertia():
    assert reflected_inertia(1.2e-4, 6) == pytest.approx(4.32e-3, rel=1e-14)
    assert reflected_inertia(1.2e-4, 1) == 1.2e-4
    ratio = reflected_inertia(1.2e-4, 90 / 11) / reflected_inertia(1.2e-4, 6)
    assert ratio == pytest.approx((15 / 11) ** 2, rel=1e-14)
    with pytest.raises(ValueError):
        reflected_inertia(0.0, 6)


def test_electrical_power():
    assert electrical_power(0.0, MOTOR) == 0.0
    assert electrical_power(10.0, MOTOR) == pytest.approx(12.0)
    assert electrical_power(20.0, MOTOR) == pytest.approx(4 * electrical_power(10.0, MOTOR))


def test_thermal_equilibrium_at_ambient(thermal):
    tp = thermal["heatsink"]
    s = ActuatorState(driver_temp=tp.ambient, sink_temp=tp.ambient)
    s2 = thermal_step(0.0, s, tp, 1.0)
    assert s2.driver_temp == tp.ambient and s2.sink_temp == tp.ambient


def test_thermal_steady_state(thermal):
    tp = ThermalParams(15.0, 413.0, 0.15, 4.0, ambient=25.0, trip_temperature=500.0)
    power = 20.0
    slow = tp.time_constants()[0]
    dt = 0.5
    s = ActuatorState(driver_temp=25.0, sink_temp=25.0)
    for _ in range(int(10 * slow / dt)):
        s = thermal_step(power, s, tp, dt)
    expected = tp.ambient + power * (tp.driver_to_sink_resistance + tp.sink_to_ambient_resistance)
    assert s.driver_temp == pytest.approx(expected, rel=0.01)


def test_thermal_monotone_approach(thermal):
    tp = thermal["no_heatsink"]
    s = ActuatorState(driver_temp=25.0, sink_temp=25.0)
    temps = []
    for _ in range(2000):
        s = thermal_step(5.0, s, tp, 0.5)
        temps.append((s.driver_temp, s.sink_temp))
    temps = np.array(temps)
    assert np.all(np.diff(temps, axis=0) >= 0)


def test_thermal_energy_bookkeeping(thermal):
    tp = thermal["heatsink"]
    dt = 0.2
    s = ActuatorState(driver_temp=tp.ambient, sink_temp=tp.ambient)
    heat_in = heat_out = 0.0
    rng = np.random.default_rng(3)
    for _ in range(5000):
        p = float(rng.uniform(0, 30))
        heat_in += p * dt
        heat_out += (s.sink_temp - tp.ambient) / tp.sink_to_ambient_resistance * dt
        s = thermal_step(p, s, tp, dt)
    stored = (tp.driver_capacitance * (s.driver_temp - tp.ambient)
              + tp.sink_capacitance * (s.sink_temp - tp.ambient))
    assert heat_in - heat_out == pytest.approx(stored, rel=0.01)


def test_trip_is_absorbing_until_reset(thermal):
    tp = ThermalParams(1.0, 1.0, 1.0, 1.0, ambient=25.0, trip_temperature=30.0)
    s = ActuatorState(driver_temp=25.0, sink_temp=25.0)
    while not s.tripped:
        s = thermal_step(10.0, s, tp, 0.1)
    assert s.driver_temp >= 30.0
    for _ in range(500):
        s = thermal_step(0.0, s, tp, 0.1)
    assert s.tripped and s.driver_temp < 30.0
    assert not reset_trip(s).tripped


def test_thermal_step_rejects_bad_dt(thermal):
    with pytest.raises(ValueError):
        thermal_step(1.0, ActuatorState(), thermal["heatsink"], -1.0)


def test_thermal_params_invariants():
    with pytest.raises(ActuatorConfigError):
        ThermalParams(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ActuatorConfigError):
        ThermalParams(1.0, 1.0, 1.0, 1.0, ambient=90.0, trip_temperature=80.0)


def test_heatsink_ratio_about_three(thermal):
    cfg = load_actuator_config()
    t_on, *_ = time_to_trip(cfg.bench_power, thermal["heatsink"], dt=0.1)
    t_off, *_ = time_to_trip(cfg.bench_power, thermal["no_heatsink"], dt=0.1)
    assert 2.5 <= t_on / t_off <= 3.5


def test_time_to_trip_trace_ends_at_trip(thermal):
    t, times, td, _ = time_to_trip(20.0, thermal["no_heatsink"], dt=0.1, record_every=7)
    assert times[-1] == pytest.approx(t)
    assert td[-1] >= 80.0 > td[-2]
