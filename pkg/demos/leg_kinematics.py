"""Walk through one leg: joint angles -> foot position -> back again.

Run with ``python3 demos/leg_kinematics.py``.
"""
import numpy as np

from quadsim.kinematics import (
    FLEXED_BACK, FLEXED_FORWARD, forward_kinematics, inverse_kinematics, jacobian)
from quadsim.morphology import load_model

model = load_model()
leg = "FL"
q = np.radians([0.0, 33.0, 66.0])  # close to the standing pose

p = forward_kinematics(q, leg, model)
print(f"{leg} at q = {np.degrees(q).round(1)} deg puts the foot at {p.round(4)} m (body frame)")

# the same point has two knee solutions; the robot normally uses one of them
for branch in (FLEXED_BACK, FLEXED_FORWARD):
    sol = inverse_kinematics(p, leg, model, knee_branch=branch)
    err = np.abs(forward_kinematics(sol, leg, model) - p).max()
    print(f"  {branch:<15} q = {np.degrees(sol).round(2)} deg, residual {err:.1e} m")

# Jacobian transpose turns a foot force into joint torques
jac = jacobian(q, leg, model)
push = np.array([0.0, 0.0, -60.0])  # N, the leg pushing down on the ground
tau = jac.T @ push
print(f"60 N of downward push needs joint torques {tau.round(2)} Nm")
print(f"Jacobian condition number {np.linalg.cond(jac):.1f}")
