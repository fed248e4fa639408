"""Tracking metrics in trailing mode: position/velocity RMSE, TPR, FDR."""

import argparse
import json

import numpy as np

from slipstream import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="scenarios/tracking_eval.json")
    ap.add_argument("--laps", type=int, default=5)
    ap.add_argument("--seeds", default="300,301,302,303,304")
    args = ap.parse_args()

    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        rep = harness.run_scenario(harness.RunConfig(
            scenario=args.scenario, mode="tracking_eval",
            stop_laps=args.laps, seed=seed))
        rows.append((rep.e_pos, rep.e_vel, rep.tpr, rep.fdr, rep.id_switches))
        print(f"seed {seed}: e_pos {rep.e_pos:.3f} m, e_vel {rep.e_vel:.3f} m/s, "
              f"TPR {rep.tpr:.1f} %, FDR {rep.fdr:.2f} %, id_switches {rep.id_switches}")

    arr = np.array([r[:4] for r in rows], dtype=float)
    med = np.median(arr, axis=0)
    print(json.dumps({"median_e_pos": round(float(med[0]), 4),
                      "median_e_vel": round(float(med[1]), 4),
                      "median_tpr": round(float(med[2]), 2),
                      "median_fdr": round(float(med[3]), 3)}))


if __name__ == "__main__":
    main()
