"""Multi-opponent efficiency: total overtake time for 1 vs 2 opponents.

The second opponent's profile is regressed while the first is being trailed
and overtaken, so the two-opponent total should land near twice the
single-opponent total (no extra dedicated trailing lap).
"""

import argparse
import json

import numpy as np

from slipstream import harness


def total_overtake_time(scenario: dict, n_opp: int, seed: int) -> float | None:
    rep = harness.run_scenario(harness.RunConfig(
        scenario=scenario, stop_overtakes=n_opp, seed=seed))
    ots = [e["t"] for e in rep.events if e["type"] == "overtake"]
    return ots[-1] if len(ots) == n_opp else None


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--track", default="tracks/stadium.csv")
    ap.add_argument("--seeds", default="201,202,203,204,205")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    opp1 = {"behavior": "shortest_path", "speed_scaler": 0.778, "start_s": 3.0}
    opp2 = {"behavior": "centerline", "speed_scaler": 0.771, "start_s": 8.0}
    base = {"track": args.track, "dt": 0.025,
            "ego": {"behavior": "racing_line", "lap_speed": 1.8},
            "noise": {"fov_range": 12.0}}

    t1s, t2s = [], []
    for seed in seeds:
        t1 = total_overtake_time({**base, "opponents": [opp1]}, 1, seed)
        t2 = total_overtake_time({**base, "opponents": [opp1, opp2]}, 2, seed)
        print(f"seed {seed}: sum_T1 = {t1}, sum_T2 = {t2}")
        if t1 is not None and t2 is not None:
            t1s.append(t1)
            t2s.append(t2)

    m1, m2 = float(np.mean(t1s)), float(np.mean(t2s))
    print(json.dumps({"mean_sum_T1": round(m1, 2), "mean_sum_T2": round(m2, 2),
                      "ratio_vs_twice": round(m2 / (2 * m1), 4)}))


if __name__ == "__main__":
    main()
