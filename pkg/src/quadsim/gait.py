"""Phase-based gait schedules, swing-foot curves and Raibert-style footholds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from quadsim.morphology import LEG_ORDER


@dataclass(frozen=True)
class GaitSchedule:
    name: str
    period: float
    duty_factor: float
    phase_offsets: tuple[float, float, float, float]
    swing_height: float = 0.06

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be > 0")
        if not 0.0 < self.duty_factor <= 1.0:
            raise ValueError("duty_factor must lie in (0, 1]")
        if len(self.phase_offsets) != len(LEG_ORDER):
            raise ValueError("need one phase offset per leg")
        if any(not 0.0 <= o < 1.0 for o in self.phase_offsets):
            raise ValueError("phase offsets must lie in [0, 1)")
        if self.swing_height < 0:
            raise ValueError("swing_height must be >= 0")

    @property
    def stance_duration(self):
        return self.duty_factor * self.period

    @property
    def swing_duration(self):
        return (1.0 - self.duty_factor) * self.period


def trot(period=0.5, swing_height=0.06):
    return GaitSchedule("trot", period, 0.5, (0.0, 0.5, 0.5, 0.0), swing_height)


def crawl(period=1.0, duty_factor=0.8, swing_height=0.06):
    # FL -> RR -> FR -> RL
    if duty_factor < 0.75:
        raise ValueError("crawl needs duty_factor >= 0.75 to keep three feet down")
    return GaitSchedule("crawl", period, duty_factor, (0.0, 0.5, 0.25, 0.75), swing_height)


def stand(period=1.0):
    return GaitSchedule("stand", period, 1.0, (0.0, 0.0, 0.0, 0.0), 0.0)


GAITS = {"trot": trot, "crawl": crawl, "stand": stand}


def make_gait(name, period=None, duty=None, swing_height=None):
    kwargs = {}
    if period is not None:
        kwargs["period"] = period
    if swing_height is not None and name != "stand":
        kwargs["swing_height"] = swing_height
    if duty is not None:
        if name != "crawl":
            raise ValueError(f"duty factor is fixed for {name}")
        kwargs["duty_factor"] = duty
    return GAITS[name](**kwargs)


def leg_phase(t, schedule):
    """Per-leg ``(phase, stance)`` at time ``t``; phase in [0, 1)."""
    cycles = t / schedule.period
    out = []
    for offset in schedule.phase_offsets:
        phase = (cycles + offset) % 1.0
        if phase >= 1.0:  # float modulo can round up to 1.0
            phase = 0.0
        out.append((phase, phase < schedule.duty_factor))
    return out


def swing_progress(phase, schedule):
    """Fraction of the swing completed, 0 at lift-off and 1 at touchdown."""
    if schedule.duty_factor >= 1.0:
        return 0.0
    return (phase - schedule.duty_factor) / (1.0 - schedule.duty_factor)


def stance_progress(phase, schedule):
    return phase / schedule.duty_factor


def swing_trajectory(s, start, target, height):
    """Foot position along the swing at progress ``s`` in [0, 1].

    Horizontal motion follows cycloid timing; the vertical profile is two raised
    cosine halves meeting at the apex ``max(start_z, target_z) + height``.  Both
    give zero velocity at lift-off and touchdown.
    """
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    s = min(1.0, max(0.0, float(s)))
    blend = s - math.sin(2.0 * math.pi * s) / (2.0 * math.pi)
    p = start + (target - start) * blend
    apex = max(start[2], target[2]) + height
    bump = 0.5 * (1.0 - math.cos(2.0 * math.pi * s))
    base_z = start[2] if s <= 0.5 else target[2]
    p[2] = base_z + (apex - base_z) * bump
    return p


def swing_velocity(s, start, target, height, swing_duration):
    """Time derivative of :func:`swing_trajectory` (m/s)."""
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    s = min(1.0, max(0.0, float(s)))
    dblend = 1.0 - math.cos(2.0 * math.pi * s)
    v = (target - start) * dblend
    apex = max(start[2], target[2]) + height
    base_z = start[2] if s <= 0.5 else target[2]
    v[2] = (apex - base_z) * math.pi * math.sin(2.0 * math.pi * s)
    return v / swing_duration


def foothold_target(base_velocity_cmd, base_velocity_actual, stance_duration,
                    hip_ground_projection, terrain=None, k_v=0.03):
    """Raibert foothold: neutral point plus a velocity-error correction, placed on the terrain."""
    v_cmd = np.asarray(base_velocity_cmd, dtype=float)
    v_act = np.asarray(base_velocity_actual, dtype=float)
    target = np.asarray(hip_ground_projection, dtype=float) + 0.5 * stance_duration * v_cmd \
        + k_v * (v_act - v_cmd)
    if terrain is None:
        target[2] = 0.0
        return target
    return terrain.project_to_surface(target)
