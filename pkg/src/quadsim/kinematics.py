"""Analytic kinematics of the 3-DOF leg (ab/ad, hip pitch, knee) in the torso frame.

Conventions
-----------
* Torso frame: x forward, y left, z up.  ``q = 0`` is the leg hanging straight down.
* Ab/ad rotates about an axis parallel to x.  The sign is mirrored for right legs
  so that positive ab/ad always swings the foot outward.
* Hip and knee rotate about y.  Positive hip swings the leg forward, positive
  knee flexes the shank backward.
* The ab/ad axis sits ``abad_offset`` metres medial of the hip pitch point, so
  ``forward_kinematics(0) == hip_offset + (0, 0, -(thigh + shank))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from quadsim.morphology import LEG_SIDE

FLEXED_BACK = "flexed-back"
FLEXED_FORWARD = "flexed-forward"
FOOT_BELOW = "below"
FOOT_ABOVE = "above"


class UnreachableError(ValueError):
    """The requested foot position cannot be reached by the leg."""


@dataclass(frozen=True)
class LegState:
    leg_id: str
    q: np.ndarray
    qdot: np.ndarray


def _leg_geometry(leg_id, model):
    side = LEG_SIDE[leg_id]
    hx, hy, hz = model.hip_offsets[leg_id]
    d = model.abad_offset
    # point on the ab/ad axis, level with the hip pitch point
    return side, (hx, hy - side * d, hz), d, model.thigh_length, model.shank_length


def _planar(h, k, l1, l2):
    sh, ch = math.sin(h), math.cos(h)
    shk, chk = math.sin(h - k), math.cos(h - k)
    x = l1 * sh + l2 * shk
    z = -l1 * ch - l2 * chk
    return x, z, sh, ch, shk, chk


def forward_kinematics(q, leg_id, model):
    """Foot position in the torso frame."""
    side, (ax, ay, az), d, l1, l2 = _leg_geometry(leg_id, model)
    qa, h, k = float(q[0]), float(q[1]), float(q[2])
    x, z, *_ = _planar(h, k, l1, l2)
    th = side * qa
    c, s = math.cos(th), math.sin(th)
    vy = side * d
    return np.array([ax + x, ay + c * vy - s * z, az + s * vy + c * z])


def jacobian(q, leg_id, model):
    """3x3 foot Jacobian d(foot position)/dq in the torso frame."""
    return fk_and_jacobian(q, leg_id, model)[1]


def fk_and_jacobian(q, leg_id, model):
    side, (ax, ay, az), d, l1, l2 = _leg_geometry(leg_id, model)
    qa, h, k = float(q[0]), float(q[1]), float(q[2])
    x, z, sh, ch, shk, chk = _planar(h, k, l1, l2)
    th = side * qa
    c, s = math.cos(th), math.sin(th)
    vy = side * d
    p = np.array([ax + x, ay + c * vy - s * z, az + s * vy + c * z])

    dx_dh, dz_dh = l1 * ch + l2 * chk, l1 * sh + l2 * shk
    dx_dk, dz_dk = -l2 * chk, -l2 * shk
    # d/dqa of Rx(side*qa) v = side * Rx (ex cross v); ex cross v = (0, -vz, vy)
    jac = np.array([
        [0.0, dx_dh, dx_dk],
        [side * (-c * z - s * vy), -s * dz_dh, -s * dz_dk],
        [side * (-s * z + c * vy), c * dz_dh, c * dz_dk],
    ])
    return p, jac


def configuration_branch(q, model):
    """(knee_branch, foot_plane) labels of a joint configuration.

    ``foot_plane`` says whether the foot lies below or above the hip pitch
    axis inside the leg plane; it separates the two ab/ad solutions.
    """
    h, k = float(q[1]), float(q[2])
    _, z, *_ = _planar(h, k, model.thigh_length, model.shank_length)
    knee = FLEXED_BACK if k >= 0.0 else FLEXED_FORWARD
    plane = FOOT_BELOW if z <= 0.0 else FOOT_ABOVE
    return knee, plane


def _fmt(p):
    return "(" + ", ".join(f"{float(v) + 0.0:.4f}" for v in p) + ")"


def _wrap(angle):
    return math.atan2(math.sin(angle), math.cos(angle))


def inverse_kinematics(p, leg_id, model, knee_branch=FLEXED_BACK, foot_plane=FOOT_BELOW):
    """Joint angles placing the foot at ``p`` (torso frame).

    Raises :class:`UnreachableError` when ``p`` is outside the leg workspace.
    """
    side, (ax, ay, az), d, l1, l2 = _leg_geometry(leg_id, model)
    rx, ry, rz = float(p[0]) - ax, float(p[1]) - ay, float(p[2]) - az

    rho2 = ry * ry + rz * rz
    zz = rho2 - d * d
    if zz < -1e-15:
        raise UnreachableError(
            f"{leg_id}: foot {_fmt(p)} is within {d} m of the ab/ad axis")
    z = math.sqrt(max(zz, 0.0))
    if foot_plane == FOOT_BELOW:
        z = -z
    elif foot_plane != FOOT_ABOVE:
        raise ValueError(f"unknown foot_plane {foot_plane!r}")
    vy = side * d
    alpha = _wrap(math.atan2(rz, ry) - math.atan2(z, vy))
    qa = side * alpha

    dist2 = rx * rx + z * z
    reach, inner = l1 + l2, abs(l1 - l2)
    dist = math.sqrt(dist2)
    if dist > reach * (1 + 1e-12) or dist < inner * (1 - 1e-12):
        raise UnreachableError(
            f"{leg_id}: foot {_fmt(p)} at planar distance {dist:.6f} m outside "
            f"[{inner:.6f}, {reach:.6f}] m")
    ck = (dist2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    ck = min(1.0, max(-1.0, ck))
    sk = math.sqrt(max(0.0, 1.0 - ck * ck))
    if knee_branch == FLEXED_FORWARD:
        sk = -sk
    elif knee_branch != FLEXED_BACK:
        raise ValueError(f"unknown knee_branch {knee_branch!r}")
    k = math.atan2(sk, ck)
    h = math.atan2(rx, -z) + math.atan2(l2 * sk, l1 + l2 * ck)
    return np.array([qa, _wrap(h), k])


def project_reachable(p, leg_id, model, margin=1e-3):
    """Nearest point to ``p`` that the leg can reach (with a small margin)."""
    side, (ax, ay, az), d, l1, l2 = _leg_geometry(leg_id, model)
    r = np.asarray(p, dtype=float) - (ax, ay, az)
    rho = math.hypot(r[1], r[2])
    if rho < d + margin:
        if rho < 1e-12:
            r[1], r[2] = 0.0, -(d + margin)
        else:
            r[1:] *= (d + margin) / rho
        rho = d + margin
    zmag = math.sqrt(rho * rho - d * d)
    dist = math.hypot(r[0], zmag)
    lo, hi = abs(l1 - l2) + margin, l1 + l2 - margin
    if lo <= dist <= hi:
        return r + (ax, ay, az)
    target = min(max(dist, lo), hi)
    if dist < 1e-12:
        x_new, z_new = 0.0, target
    else:
        x_new, z_new = r[0] * target / dist, zmag * target / dist
    # keep the in-plane direction of (ry, rz), rescale its leg-plane height
    rho_new = math.sqrt(z_new * z_new + d * d)
    scale = rho_new / rho
    return np.array([x_new + ax, r[1] * scale + ay, r[2] * scale + az])
