"""Torque-speed envelope of the knee drive and the heat-sink soak test.

Run with ``python3 demos/actuator_thermal.py``.
"""
import numpy as np

from quadsim.actuator import MotorParams, joint_torque_capacity
from quadsim.experiment import thermal_bench
from quadsim.morphology import load_model

model = load_model()
motor = MotorParams()

print("joint speed (rad/s)   knee torque available (Nm)")
for w in np.linspace(0.0, 30.0, 7):
    print(f"{w:14.1f}   {float(joint_torque_capacity('knee', model, motor, w)):10.2f}")

on = thermal_bench(heatsink=True)
off = thermal_bench(heatsink=False)
print(f"\nconstant {on.power:.0f} W into the driver:")
print(f"  with heat sink    trips after {on.time_to_trip / 60:.1f} min")
print(f"  without heat sink trips after {off.time_to_trip / 60:.1f} min")
print(f"  ratio {on.time_to_trip / off.time_to_trip:.2f}")
