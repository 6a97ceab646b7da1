"""Fixed-layout actuator command/telemetry codec and a four-bus CAN-FD timing model.

Byte layouts (little-endian, IEEE-754 float32):

Command, 21 bytes::

    offset  size  field
    0       1     msg_type = 0x01
    1       4     position_cmd        rad
    5       4     velocity_cmd        rad/s
    9       4     feedforward_torque  Nm
    13      4     kp_scale
    17      4     kd_scale

Telemetry, 18 bytes::

    offset  size  field
    0       1     msg_type = 0x02
    1       4     position            rad
    5       4     velocity            rad/s
    9       4     torque_estimate     Nm
    13      4     driver_temp         degC
    17      1     fault_code
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

COMMAND_TYPE = 0x01
TELEMETRY_TYPE = 0x02
COMMAND_LEN = 21
TELEMETRY_LEN = 18
MAX_PAYLOAD = 64
MAX_ID = 0x7FF

_COMMAND = struct.Struct("<B5f")
_TELEMETRY = struct.Struct("<B4fB")

NODE_IDS = {"abad": 1, "hip": 2, "knee": 3}
TELEMETRY_ID_BASE = 0x100


class CodecError(ValueError):
    """Malformed bytes or unencodable field values."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)


class BusOverrunError(RuntimeError):
    """Frames submitted in one tick need more than the tick to transmit."""

    def __init__(self, bus, dropped, schedule):
        self.bus = bus
        self.dropped = dropped
        self.schedule = schedule
        ids = ", ".join(f"0x{f.arbitration_id:03x}" for f in dropped)
        super().__init__(f"bus {bus} overrun: dropped frames {ids}")


@dataclass(frozen=True)
class CanFrame:
    arbitration_id: int
    payload: bytes
    timestamp: float = 0.0
    bus: int = 0

    def __post_init__(self):
        if not 0 <= self.arbitration_id <= MAX_ID:
            raise CodecError(f"arbitration id {self.arbitration_id} is not 11-bit")
        if len(self.payload) > MAX_PAYLOAD:
            raise CodecError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")


@dataclass(frozen=True)
class ActuatorCommandMsg:
    position_cmd: float = 0.0
    velocity_cmd: float = 0.0
    feedforward_torque: float = 0.0
    kp_scale: float = 0.0
    kd_scale: float = 0.0
    msg_type: int = COMMAND_TYPE


@dataclass(frozen=True)
class TelemetryMsg:
    position: float = 0.0
    velocity: float = 0.0
    torque_estimate: float = 0.0
    driver_temp: float = 0.0
    fault_code: int = 0
    msg_type: int = TELEMETRY_TYPE


def _check_floats(values, names):
    for v, name in zip(values, names):
        if not math.isfinite(v):
            raise CodecError(f"{name} is not finite: {v}")
        if abs(v) > 3.4028234663852886e38:
            raise CodecError(f"{name} overflows float32: {v}")


def encode_command(msg):
    values = (msg.position_cmd, msg.velocity_cmd, msg.feedforward_torque, msg.kp_scale, msg.kd_scale)
    _check_floats(values, ("position_cmd", "velocity_cmd", "feedforward_torque", "kp_scale", "kd_scale"))
    if msg.msg_type != COMMAND_TYPE:
        raise CodecError(f"command msg_type must be 0x{COMMAND_TYPE:02x}")
    return _COMMAND.pack(COMMAND_TYPE, *values)


def decode_command(data):
    data = bytes(data)
    if len(data) != COMMAND_LEN:
        raise CodecError(f"command must be {COMMAND_LEN} bytes, got {len(data)}",
                         offset=min(len(data), COMMAND_LEN))
    if data[0] != COMMAND_TYPE:
        raise CodecError(f"unknown msg_type 0x{data[0]:02x}", offset=0)
    _, *values = _COMMAND.unpack(data)
    for i, v in enumerate(values):
        if not math.isfinite(v):
            raise CodecError("non-finite float", offset=1 + 4 * i)
    return ActuatorCommandMsg(*values)


def encode_telemetry(msg):
    values = (msg.position, msg.velocity, msg.torque_estimate, msg.driver_temp)
    _check_floats(values, ("position", "velocity", "torque_estimate", "driver_temp"))
    if msg.msg_type != TELEMETRY_TYPE:
        raise CodecError(f"telemetry msg_type must be 0x{TELEMETRY_TYPE:02x}")
    if not 0 <= int(msg.fault_code) <= 255 or int(msg.fault_code) != msg.fault_code:
        raise CodecError(f"fault_code must be a byte, got {msg.fault_code}")
    return _TELEMETRY.pack(TELEMETRY_TYPE, *values, int(msg.fault_code))


def decode_telemetry(data):
    data = bytes(data)
    if len(data) != TELEMETRY_LEN:
        raise CodecError(f"telemetry must be {TELEMETRY_LEN} bytes, got {len(data)}",
                         offset=min(len(data), TELEMETRY_LEN))
    if data[0] != TELEMETRY_TYPE:
        raise CodecError(f"unknown msg_type 0x{data[0]:02x}", offset=0)
    _, *values, fault = _TELEMETRY.unpack(data)
    for i, v in enumerate(values):
        if not math.isfinite(v):
            raise CodecError("non-finite float", offset=1 + 4 * i)
    return TelemetryMsg(*values, fault_code=fault)


# ---------------------------------------------------------------------------
# bus timing

@dataclass(frozen=True)
class BusTopology:
    buses: int = 4
    nodes_per_bus: int = 3
    node_ids: tuple[int, ...] = (1, 2, 3)
    bitrate: float = 5_000_000.0
    overhead_bits: int = 128
    wire_rating: float = 20.0  # A, daisy-chain segment rating

    def __post_init__(self):
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValueError("node ids must be unique per bus")
        if len(self.node_ids) != self.nodes_per_bus:
            raise ValueError("need one node id per node")
        if not self.bitrate > 0:
            raise ValueError("bitrate must be > 0")

    def frame_duration(self, frame):
        return (8 * len(frame.payload) + self.overhead_bits) / self.bitrate


@dataclass
class Delivery:
    frame: CanFrame
    order: int
    start: float
    delivered: float


@dataclass
class BusSchedule:
    deliveries: dict = field(default_factory=dict)   # bus -> [Delivery]
    utilization: dict = field(default_factory=dict)  # bus -> fraction
    dropped: dict = field(default_factory=dict)      # bus -> [CanFrame]

    @property
    def max_utilization(self):
        return max(self.utilization.values(), default=0.0)


def bus_transmit(frames, topology, tick_period, tick_start=0.0, strict=True):
    """Arbitrate and serialize one tick's frames on every bus.

    Lowest arbitration id wins; ties keep submission order.  With ``strict``
    an overrun raises :class:`BusOverrunError` (carrying the partial schedule);
    otherwise the lowest-priority frames that do not fit are listed in
    ``schedule.dropped``.
    """
    schedule = BusSchedule()
    per_bus = {b: [] for b in range(topology.buses)}
    for order, frame in enumerate(frames):
        if frame.bus not in per_bus:
            raise ValueError(f"frame tagged with unknown bus {frame.bus}")
        per_bus[frame.bus].append((frame.arbitration_id, order, frame))
    overrun = None
    for bus, queued in per_bus.items():
        queued.sort(key=lambda item: (item[0], item[1]))
        t = tick_start
        busy = 0.0
        out, dropped = [], []
        for _, order, frame in queued:
            duration = topology.frame_duration(frame)
            if dropped or busy + duration > tick_period:
                dropped.append(frame)
                continue
            out.append(Delivery(frame, order, t, t + duration))
            t += duration
            busy += duration
        demand = sum(topology.frame_duration(f) for _, _, f in queued)
        schedule.deliveries[bus] = out
        schedule.utilization[bus] = demand / tick_period
        if dropped:
            schedule.dropped[bus] = dropped
            if overrun is None:
                overrun = bus
    if overrun is not None and strict:
        raise BusOverrunError(overrun, schedule.dropped[overrun], schedule)
    return schedule


@dataclass
class PowerCheck:
    segment_currents: np.ndarray
    warnings: list


def leg_daisy_chain_power_check(topology, currents):
    """Current in each daisy-chain segment, torso -> abad -> hip -> knee."""
    currents = np.asarray(currents, dtype=float)
    if np.any(currents < 0):
        raise ValueError("actuator current draws must be >= 0")
    segments = np.cumsum(currents[::-1])[::-1]
    names = ("abad", "hip", "knee")
    warnings = [
        f"{names[i]} segment carries {segments[i]:.3f} A > rating {topology.wire_rating:.3f} A"
        for i in range(len(segments)) if segments[i] > topology.wire_rating
    ]
    return PowerCheck(segments, warnings)


def write_frame_trace(path, rows):
    """``rows`` are ``(timestamp, bus, id, payload)`` tuples."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "bus", "id", "payload"])
        for ts, bus, arb_id, payload in rows:
            writer.writerow([f"{ts:.6f}", bus, f"0x{arb_id:03x}", payload.hex()])
