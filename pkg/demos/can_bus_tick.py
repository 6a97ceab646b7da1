"""One 400 Hz control tick on the four leg buses.

Each bus carries a command and a telemetry frame for the three actuators of
its leg. Run with ``python3 demos/can_bus_tick.py``.
"""
from quadsim.canbus import (
    ActuatorCommandMsg, BusTopology, CanFrame, TelemetryMsg, bus_transmit, decode_command,
    encode_command, encode_telemetry)

topology = BusTopology()
tick = 1.0 / 400.0

cmd = ActuatorCommandMsg(position_cmd=0.61, velocity_cmd=0.0, feedforward_torque=4.2)
data = encode_command(cmd)
print(f"command frame payload ({len(data)} bytes): {data.hex()}")
print(f"decodes back to {decode_command(data)}")

frames = []
for bus in range(4):
    for node in topology.node_ids:
        frames.append(CanFrame(node, encode_command(cmd), bus=bus))
        frames.append(CanFrame(0x100 + node, encode_telemetry(TelemetryMsg(driver_temp=41.0)), bus=bus))

schedule = bus_transmit(frames, topology, tick)
for bus, deliveries in schedule.deliveries.items():
    order = " ".join(f"{d.frame.arbitration_id:#x}" for d in deliveries)
    print(f"bus {bus}: {100 * schedule.utilization[bus]:.1f}% busy, order {order}")
