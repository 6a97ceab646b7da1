"""Trot for a few seconds on a slope and look at what came out.

Run with ``python3 demos/trot_walkthrough.py [output_dir]``. With an output
directory the trace, summary and a PNG plot are written there.
"""
import sys

import numpy as np

from quadsim.experiment import ExperimentSpec, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else None
spec = ExperimentSpec(scenario="trot", duration=4.0, slope_deg=5.0, seed=1, output_dir=out)
result = run_experiment(spec)
m = result.metrics

print(f"commanded {spec.commanded_velocity} m/s up a {spec.slope_deg} deg slope for {spec.duration} s")
print(f"  fell: {m.fell}")
print(f"  mean forward speed {m.mean_forward_speed:.3f} m/s")
print(f"  roll/pitch RMS {np.degrees(m.roll_pitch_rms):.2f} deg, height RMS error {1000 * m.height_rms_error:.1f} mm")
print(f"  {m.footfalls} footfalls, {100 * m.touchdown_detection_rate:.0f}% seen by the current-based detector")
print(f"  hottest driver {m.max_driver_temp:.1f} C, {m.energy_consumed:.0f} J drawn")

if out:
    from quadsim.plotting import plot_trace

    print("plot:", plot_trace(result.files["trace"]))
