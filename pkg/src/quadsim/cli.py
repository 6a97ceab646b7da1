"""``quadsim`` command line: run scenarios, thermal bench, model inspection, fk/ik, plots."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from quadsim import kinematics
from quadsim.experiment import (
    ExperimentConfigError, ExperimentSpec, dumps_summary, run_experiment, summary_document,
    thermal_bench, write_thermal_trace)
from quadsim.morphology import JOINT_NAMES, LEG_ORDER, ModelValidationError, describe, load_model

log = logging.getLogger("quadsim")


def _floats(text, n, what):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} numbers, got {len(parts)}")
    return np.array([float(p) for p in parts])


def _cmd_run(args):
    spec = ExperimentSpec(
        scenario=args.scenario if args.gait is None else args.gait,
        duration=args.duration,
        commanded_velocity=args.speed,
        slope_deg=args.slope_deg,
        seed=args.seed,
        model_config_path=args.config,
        policy_path=args.policy,
        output_dir=args.out,
        controller_config_path=args.controller_config,
        actuator_config_path=args.actuator_config,
        period=args.period,
        duty=args.duty,
        transport_delay=args.transport_delay,
        frame_trace=args.frame_trace,
    )
    result = run_experiment(spec)
    doc = summary_document(spec, result.metrics)
    if args.out is None:
        sys.stdout.write(dumps_summary(doc))
    else:
        m = result.metrics
        print(f"{spec.scenario}: fell={m.fell} speed={m.mean_forward_speed:.3f} m/s "
              f"roll/pitch rms={np.degrees(m.roll_pitch_rms):.2f} deg -> {args.out}")
    return result.exit_code


def _cmd_thermal(args):
    configs = {"on": [True], "off": [False], "both": [True, False]}[args.heatsink]
    results = {}
    for sink in configs:
        res = thermal_bench(sink, args.power, args.actuator_config)
        name = "heatsink" if sink else "no_heatsink"
        results[name] = res.time_to_trip
        trip = "no trip" if res.time_to_trip is None else f"{res.time_to_trip:.1f} s"
        print(f"{name:<12} {res.power:.1f} W: {trip} (horizon {res.horizon:.0f} s)")
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            write_thermal_trace(Path(args.out) / f"thermal_{name}.csv", res)
    if len(results) == 2 and None not in results.values():
        print(f"ratio        {results['heatsink'] / results['no_heatsink']:.3f}")
    return 0


def _cmd_describe(args):
    print(describe(load_model(args.config)))
    return 0


def _cmd_fk(args):
    model = load_model(args.config)
    q = _floats(args.q, 3, "q")
    if args.deg:
        q = np.radians(q)
    p = kinematics.forward_kinematics(q, args.leg, model)
    print(json.dumps({"leg": args.leg, "q_rad": q.tolist(), "foot_m": p.tolist()}))
    return 0


def _cmd_ik(args):
    model = load_model(args.config)
    p = _floats(args.p, 3, "p")
    try:
        q = kinematics.inverse_kinematics(p, args.leg, model, knee_branch=args.branch)
    except kinematics.UnreachableError as exc:
        print(f"unreachable: {exc}", file=sys.stderr)
        return 2
    out = {"leg": args.leg, "foot_m": p.tolist(), "q_rad": q.tolist()}
    if args.deg:
        out["q_deg"] = np.degrees(q).tolist()
    print(json.dumps(out))
    return 0


def _cmd_plot(args):
    from quadsim.plotting import plot_trace

    out = plot_trace(args.trace, args.output)
    print(out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="quadsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="closed-loop scenario")
    run.add_argument("--scenario", choices=("stand", "trot", "crawl"), default="trot")
    run.add_argument("--gait", choices=("trot", "crawl"), help="alias for --scenario")
    run.add_argument("--speed", type=float,
                     help="commanded forward speed, m/s (default 0.3 trot, 0.1 crawl)")
    run.add_argument("--slope-deg", type=float, default=0.0)
    run.add_argument("--duration", type=float, default=10.0, help="simulated seconds")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--config", help="robot model JSON")
    run.add_argument("--policy", default="stabilizer", help="policy JSON or shipped name")
    run.add_argument("--controller-config")
    run.add_argument("--actuator-config")
    run.add_argument("--period", type=float)
    run.add_argument("--duty", type=float)
    run.add_argument("--transport-delay", action="store_true", help="one control tick of bus latency")
    run.add_argument("--frame-trace", action="store_true", help="also write frames.csv")
    run.add_argument("--out", help="output directory (summary printed to stdout if omitted)")
    run.set_defaults(func=_cmd_run)

    th = sub.add_parser("thermal-bench", help="constant-power soak to thermal trip")
    th.add_argument("--heatsink", choices=("on", "off", "both"), default="both")
    th.add_argument("--power", type=float, help="dissipated power, W (default: config)")
    th.add_argument("--actuator-config")
    th.add_argument("--out")
    th.set_defaults(func=_cmd_thermal)

    de = sub.add_parser("describe-model", help="print the robot model")
    de.add_argument("--config")
    de.set_defaults(func=_cmd_describe)

    fk = sub.add_parser("fk", help="foot position for joint angles")
    fk.add_argument("--leg", choices=LEG_ORDER, default="FL")
    fk.add_argument("--q", required=True, help=f"'{' '.join(JOINT_NAMES)}' angles")
    fk.add_argument("--deg", action="store_true", help="angles in degrees")
    fk.add_argument("--config")
    fk.set_defaults(func=_cmd_fk)

    ik = sub.add_parser("ik", help="joint angles for a body-frame foot position")
    ik.add_argument("--leg", choices=LEG_ORDER, default="FL")
    ik.add_argument("--p", required=True, help="'x y z' in metres")
    ik.add_argument("--branch", choices=(kinematics.FLEXED_BACK, kinematics.FLEXED_FORWARD),
                    default=kinematics.FLEXED_BACK)
    ik.add_argument("--deg", action="store_true", help="also report degrees")
    ik.add_argument("--config")
    ik.set_defaults(func=_cmd_ik)

    pl = sub.add_parser("plot", help="PNG summary of a trace.csv")
    pl.add_argument("trace")
    pl.add_argument("-o", "--output")
    pl.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ExperimentConfigError, ModelValidationError, ValueError, OSError) as exc:
        print(f"quadsim {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
