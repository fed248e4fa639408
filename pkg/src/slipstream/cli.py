"""Command-line entry point: run scenarios, sweep speed scalers, score traces."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, sim


def _add_stop_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--overtakes", type=int, help="stop after N successful overtakes")
    g.add_argument("--laps", type=int, help="stop after N completed ego laps")
    g.add_argument("--duration", type=float, help="stop after S seconds of sim time")


def _stop_kwargs(args, scenario: dict) -> dict:
    if args.overtakes is not None:
        return {"stop_overtakes": args.overtakes}
    if args.laps is not None:
        return {"stop_laps": args.laps}
    if args.duration is not None:
        return {"stop_duration": args.duration}
    return {"stop_duration": float(scenario.get("duration_s", 60.0))}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="slipstream",
        description="Closed-track multi-opponent tracking and overtaking stack.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write a report")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--mode", default="trail_and_overtake",
                       choices=["track_only", "trail_and_overtake", "tracking_eval"])
    _add_stop_args(p_run)

    p_sweep = sub.add_parser("sweep", help="run per speed scaler and report S_max")
    p_sweep.add_argument("--scenario", required=True)
    p_sweep.add_argument("--scalers", required=True,
                         help="comma-separated ascending list, e.g. 0.5,0.6,0.7")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    _add_stop_args(p_sweep)

    p_metrics = sub.add_parser("metrics", help="score a tracker trace against truth")
    p_metrics.add_argument("--trace", required=True)
    p_metrics.add_argument("--truth", required=True)
    p_metrics.add_argument("--gate", type=float, default=0.5)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            scenario = sim.load_scenario(args.scenario)
            cfg = harness.RunConfig(scenario=args.scenario, mode=args.mode,
                                    out_dir=args.out, seed=args.seed,
                                    **_stop_kwargs(args, scenario))
            report = harness.run_scenario(cfg)
            print(json.dumps(report.to_json_dict(), sort_keys=True, indent=2))
            return 0
        if args.command == "sweep":
            scalers = sorted(float(s) for s in args.scalers.split(","))
            scenario = sim.load_scenario(args.scenario)
            cfg = harness.RunConfig(scenario=args.scenario, out_dir=args.out,
                                    seed=args.seed, **_stop_kwargs(args, scenario))
            table = harness.sweep_speed_scaler(cfg, scalers)
            print(json.dumps(table, sort_keys=True, indent=2))
            return 0
        if args.command == "metrics":
            trace = [json.loads(l) for l in open(args.trace, encoding="utf-8")]
            truth = [json.loads(l) for l in open(args.truth, encoding="utf-8")]
            e_pos, e_vel, tpr, fdr, ids = harness.compute_tracking_metrics(
                trace, truth, gate=args.gate)
            print(json.dumps({"e_pos": e_pos, "e_vel": e_vel, "tpr": tpr,
                              "fdr": fdr, "id_switches": ids},
                             sort_keys=True, indent=2))
            return 0
    except (harness.ConfigError, sim.ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
