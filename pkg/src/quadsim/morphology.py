"""Parametric robot description: geometry, masses, transmissions and joint limits.

The model is loaded from a JSON document whose field names carry their units
(``thigh_length_m``, ``joint_limits_deg`` ...).  Everything downstream treats a
:class:`RobotModel` as read-only.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

LEG_ORDER = ("FL", "FR", "RL", "RR")
JOINT_NAMES = ("abad", "hip", "knee")

# +1 for left legs, -1 for right legs; mirrors the ab/ad sign and lateral offsets.
LEG_SIDE = {"FL": 1.0, "FR": -1.0, "RL": 1.0, "RR": -1.0}


class ModelValidationError(ValueError):
    """Raised when a model description violates one of its invariants."""

    def __init__(self, field_name, message):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class TransmissionSpec:
    sun_teeth: int = 20
    planet_teeth: int = 40
    ring_teeth: int = 100
    drive_sprocket_teeth: int | None = None
    driven_sprocket_teeth: int | None = None
    efficiency: float = 0.90

    def validate(self, joint="transmission"):
        teeth = [self.sun_teeth, self.planet_teeth, self.ring_teeth]
        teeth += [t for t in (self.drive_sprocket_teeth, self.driven_sprocket_teeth) if t is not None]
        if any(int(t) != t or t < 8 for t in teeth):
            raise ModelValidationError(joint, f"tooth counts must be integers >= 8, got {teeth}")
        if self.ring_teeth != self.sun_teeth + 2 * self.planet_teeth:
            raise ModelValidationError(
                joint,
                f"planetary mesh violated: ring {self.ring_teeth} != "
                f"sun {self.sun_teeth} + 2*planet {self.planet_teeth}",
            )
        if not 0.0 < self.efficiency <= 1.0:
            raise ModelValidationError(joint, f"efficiency must lie in (0, 1], got {self.efficiency}")


@dataclass(frozen=True)
class JointLimits:
    """Per-joint (lower, upper) bounds in radians, ordered (abad, hip, knee)."""

    lower: tuple[float, float, float] = (
        math.radians(-35.0), math.radians(-60.0), math.radians(-55.0))
    upper: tuple[float, float, float] = (
        math.radians(35.0), math.radians(75.0), math.radians(165.0))

    def validate(self):
        for name, lo, hi in zip(JOINT_NAMES, self.lower, self.upper):
            if not lo < hi:
                raise ModelValidationError(f"joint_limits.{name}", f"lower {lo} must be < upper {hi}")

    @property
    def lower_array(self):
        return np.asarray(self.lower, dtype=float)

    @property
    def upper_array(self):
        return np.asarray(self.upper, dtype=float)


def _default_transmissions():
    return {
        "abad": TransmissionSpec(),
        "hip": TransmissionSpec(),
        "knee": TransmissionSpec(drive_sprocket_teeth=11, driven_sprocket_teeth=15),
    }


def _default_hip_offsets():
    half_l, half_w = 0.275, 0.15
    return {
        "FL": (half_l, half_w, 0.0),
        "FR": (half_l, -half_w, 0.0),
        "RL": (-half_l, half_w, 0.0),
        "RR": (-half_l, -half_w, 0.0),
    }


@dataclass(frozen=True)
class RobotModel:
    """Immutable robot description.

    ``hip_offsets`` locate the hip pitch joint of each leg (at zero ab/ad) in
    the torso frame.  The ab/ad axis runs parallel to body x, ``abad_offset``
    metres medial of that point.
    """

    total_mass: float = 25.0
    leg_mass: float = 1.5
    actuator_mass: float = 0.920
    torso_dims: tuple[float, float, float] = (0.65, 0.30, 0.15)
    hip_offsets: dict = field(default_factory=_default_hip_offsets)
    thigh_length: float = 0.25
    shank_length: float = 0.25
    abad_offset: float = 0.07
    joint_limits: JointLimits = field(default_factory=JointLimits)
    transmissions: dict = field(default_factory=_default_transmissions)
    rotor_inertia: float = 1.2e-4
    joint_viscous_friction: float = 0.02
    nominal_height: float = 0.40
    leg_order: tuple[str, ...] = LEG_ORDER

    def __post_init__(self):
        self.validate()

    def validate(self):
        if tuple(self.leg_order) != LEG_ORDER:
            raise ModelValidationError("leg_order", f"must be {LEG_ORDER}")
        for name in ("total_mass", "leg_mass", "actuator_mass", "thigh_length",
                     "shank_length", "rotor_inertia", "nominal_height"):
            if not getattr(self, name) > 0:
                raise ModelValidationError(name, "must be > 0")
        if self.abad_offset < 0:
            raise ModelValidationError("abad_offset", "must be >= 0")
        if self.joint_viscous_friction < 0:
            raise ModelValidationError("joint_viscous_friction", "must be >= 0")
        if any(not d > 0 for d in self.torso_dims):
            raise ModelValidationError("torso_dims", "all dimensions must be > 0")
        if not self.total_mass > 4 * self.leg_mass:
            raise ModelValidationError("total_mass", "must exceed the mass of four legs")
        if set(self.hip_offsets) != set(LEG_ORDER):
            raise ModelValidationError("hip_offsets", f"need exactly the legs {LEG_ORDER}")
        for front, left, right in (("front", "FL", "FR"), ("rear", "RL", "RR")):
            lx, ly, lz = self.hip_offsets[left]
            rx, ry, rz = self.hip_offsets[right]
            if not (math.isclose(lx, rx, abs_tol=1e-12) and math.isclose(ly, -ry, abs_tol=1e-12)
                    and math.isclose(lz, rz, abs_tol=1e-12)):
                raise ModelValidationError("hip_offsets", f"{front} hips are not mirror symmetric")
            if not ly > 0:
                raise ModelValidationError("hip_offsets", f"{left} must lie on the +y side")
        self.joint_limits.validate()
        if set(self.transmissions) != set(JOINT_NAMES):
            raise ModelValidationError("transmissions", f"need exactly the joints {JOINT_NAMES}")
        for joint, spec in self.transmissions.items():
            spec.validate(joint)
        knee = self.transmissions["knee"]
        if knee.drive_sprocket_teeth is None or knee.driven_sprocket_teeth is None:
            raise ModelValidationError("knee", "knee transmission needs both sprocket tooth counts")

    @property
    def reductions(self):
        """Joint reductions (abad, hip, knee) as floats."""
        return np.array([float(joint_reduction(j, self.transmissions[j])) for j in JOINT_NAMES])

    @property
    def efficiencies(self):
        return np.array([self.transmissions[j].efficiency for j in JOINT_NAMES])

    def hip_offset(self, leg_id):
        return np.asarray(self.hip_offsets[leg_id], dtype=float)

    def base_inertia(self):
        """Diagonal inertia of the torso box carrying the whole (lumped) mass."""
        lx, ly, lz = self.torso_dims
        m = self.total_mass
        return np.array([m * (ly**2 + lz**2), m * (lx**2 + lz**2), m * (lx**2 + ly**2)]) / 12.0

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def planetary_ratio(spec, joint="transmission"):
    """Sun-in, carrier-out reduction with the ring held: exactly ``1 + ring/sun``."""
    spec.validate(joint)
    return 1 + Fraction(spec.ring_teeth, spec.sun_teeth)


def joint_reduction(joint, spec):
    """Total reduction of a joint; the knee adds the chain stage on top of the gearbox."""
    ratio = planetary_ratio(spec, joint)
    if joint == "knee":
        if spec.drive_sprocket_teeth is None or spec.driven_sprocket_teeth is None:
            raise ModelValidationError("knee", "knee transmission needs both sprocket tooth counts")
        ratio *= Fraction(spec.driven_sprocket_teeth, spec.drive_sprocket_teeth)
    elif joint not in JOINT_NAMES:
        raise ModelValidationError(str(joint), "unknown joint")
    return ratio


def actuator_to_joint(q_act, reductions):
    return np.asarray(q_act, dtype=float) / np.asarray(reductions, dtype=float)


def joint_to_actuator(q_joint, reductions):
    return np.asarray(q_joint, dtype=float) * np.asarray(reductions, dtype=float)


def joint_to_actuator_torque(tau_joint, reductions):
    """Ideal (lossless) torque map; the simulator applies efficiency on top."""
    return np.asarray(tau_joint, dtype=float) / np.asarray(reductions, dtype=float)


def actuator_to_joint_torque(tau_act, reductions):
    return np.asarray(tau_act, dtype=float) * np.asarray(reductions, dtype=float)


def clamp_to_limits(q, limits):
    q = np.asarray(q, dtype=float)
    clamped = np.clip(q, limits.lower_array, limits.upper_array)
    return clamped, clamped != q


# ---------------------------------------------------------------------------
# JSON round trip

def _model_from_dict(doc):
    try:
        limits_rad = doc.get("joint_limits_rad")
        if limits_rad is None:
            limits_deg = doc["joint_limits_deg"]
            limits_rad = {j: [math.radians(v) for v in limits_deg[j]] for j in JOINT_NAMES}
        limits = JointLimits(
            lower=tuple(float(limits_rad[j][0]) for j in JOINT_NAMES),
            upper=tuple(float(limits_rad[j][1]) for j in JOINT_NAMES),
        )
        transmissions = {}
        for j in JOINT_NAMES:
            t = doc["transmissions"][j]
            transmissions[j] = TransmissionSpec(
                sun_teeth=t["sun_teeth"],
                planet_teeth=t["planet_teeth"],
                ring_teeth=t["ring_teeth"],
                drive_sprocket_teeth=t.get("drive_sprocket_teeth"),
                driven_sprocket_teeth=t.get("driven_sprocket_teeth"),
                efficiency=float(t["efficiency"]),
            )
        return RobotModel(
            total_mass=float(doc["total_mass_kg"]),
            leg_mass=float(doc["leg_mass_kg"]),
            actuator_mass=float(doc["actuator_mass_kg"]),
            torso_dims=tuple(float(v) for v in doc["torso_dims_m"]),
            hip_offsets={leg: tuple(float(v) for v in doc["hip_offsets_m"][leg]) for leg in LEG_ORDER},
            thigh_length=float(doc["thigh_length_m"]),
            shank_length=float(doc["shank_length_m"]),
            abad_offset=float(doc["abad_offset_m"]),
            joint_limits=limits,
            transmissions=transmissions,
            rotor_inertia=float(doc["rotor_inertia_kgm2"]),
            joint_viscous_friction=float(doc["joint_viscous_friction_nms_per_rad"]),
            nominal_height=float(doc["nominal_height_m"]),
        )
    except KeyError as exc:
        raise ModelValidationError(str(exc.args[0]), "missing field") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelValidationError):
            raise
        raise ModelValidationError("model", str(exc)) from None


def model_to_dict(model):
    return {
        "total_mass_kg": model.total_mass,
        "leg_mass_kg": model.leg_mass,
        "actuator_mass_kg": model.actuator_mass,
        "torso_dims_m": list(model.torso_dims),
        "hip_offsets_m": {leg: list(model.hip_offsets[leg]) for leg in LEG_ORDER},
        "thigh_length_m": model.thigh_length,
        "shank_length_m": model.shank_length,
        "abad_offset_m": model.abad_offset,
        "joint_limits_rad": {
            j: [model.joint_limits.lower[i], model.joint_limits.upper[i]]
            for i, j in enumerate(JOINT_NAMES)
        },
        "transmissions": {j: dataclasses.asdict(model.transmissions[j]) for j in JOINT_NAMES},
        "rotor_inertia_kgm2": model.rotor_inertia,
        "joint_viscous_friction_nms_per_rad": model.joint_viscous_friction,
        "nominal_height_m": model.nominal_height,
    }


def load_model(path=None):
    """Load and validate a model file; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("quadsim.data").joinpath("default_model.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelValidationError("file", f"not valid JSON: {exc}") from None
    return _model_from_dict(doc)


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def describe(model):
    """Human-readable summary used by ``quadsim describe-model``."""
    from quadsim.actuator import reflected_inertia

    lines = [
        f"total mass        {model.total_mass:.3f} kg (legs {model.leg_mass:.2f} kg each)",
        f"actuator mass     {model.actuator_mass:.3f} kg",
        f"torso dims        {' x '.join(f'{d:.3f}' for d in model.torso_dims)} m",
        f"thigh / shank     {model.thigh_length:.3f} / {model.shank_length:.3f} m",
        f"ab/ad offset      {model.abad_offset:.3f} m",
        f"nominal height    {model.nominal_height:.3f} m",
        "hip offsets (m):",
    ]
    for leg in LEG_ORDER:
        lines.append(f"  {leg}  " + "  ".join(f"{v:+.3f}" for v in model.hip_offsets[leg]))
    lines.append("joint   limits (deg)        reduction      efficiency  reflected inertia (kg m^2)")
    for i, j in enumerate(JOINT_NAMES):
        ratio = joint_reduction(j, model.transmissions[j])
        lo, hi = math.degrees(model.joint_limits.lower[i]), math.degrees(model.joint_limits.upper[i])
        refl = reflected_inertia(model.rotor_inertia, float(ratio))
        lines.append(
            f"{j:<6}  [{lo:+7.1f}, {hi:+7.1f}]   {str(ratio):>6} = {float(ratio):.4f}"
            f"   {model.transmissions[j].efficiency:.2f}        {refl:.4e}"
        )
    return "\n".join(lines)
