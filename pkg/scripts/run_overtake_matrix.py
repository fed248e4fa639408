"""Overtake success matrix: R_ot/c per opponent behavior at a fixed speed scaler.

Runs N single-overtake attempts per behavior (fresh seed each) and prints the
aggregate success rate, mirroring the single-opponent evaluation protocol.
"""

import argparse
import json
import time

from slipstream import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--track", default="tracks/stadium.csv")
    ap.add_argument("--scaler", type=float, default=0.70)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--lap-speed", type=float, default=1.8)
    ap.add_argument("--seed0", type=int, default=100)
    args = ap.parse_args()

    behaviors = ["racing_line", "shortest_path", "centerline", "reactive_gap"]
    total_ot = total_crash = 0
    t0 = time.perf_counter()
    print(f"{'behavior':<15}{'N_ot':>6}{'N_c':>6}{'R_ot/c':>9}")
    for beh in behaviors:
        n_ot = n_crash = 0
        for k in range(args.runs):
            scn = {
                "track": args.track, "dt": 0.025,
                "ego": {"behavior": "racing_line", "lap_speed": args.lap_speed},
                "opponents": [{"behavior": beh, "speed_scaler": args.scaler,
                               "start_s": 3.0}],
            }
            rep = harness.run_scenario(harness.RunConfig(
                scenario=scn, stop_overtakes=1, seed=args.seed0 + k))
            n_ot += rep.n_ot
            n_crash += rep.n_crash
        total_ot += n_ot
        total_crash += n_crash
        r = n_ot / max(n_ot + n_crash, 1)
        print(f"{beh:<15}{n_ot:>6}{n_crash:>6}{r:>9.3f}")
    agg = total_ot / max(total_ot + total_crash, 1)
    print(json.dumps({"aggregate_r_otc": round(agg, 4),
                      "scaler": args.scaler,
                      "wall_s": round(time.perf_counter() - t0, 1)}))


if __name__ == "__main__":
    main()
