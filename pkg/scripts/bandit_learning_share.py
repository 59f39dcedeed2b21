"""Better-arm activation share of the learning mechanism across seeds, written as CSV."""

import argparse
import csv
import sys

import numpy as np

from coordmech.scenario import builtin
from coordmech.sim_harness import run_bandit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--horizon", type=int, default=200)
    ap.add_argument("--m", type=int, default=16)
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args()

    sc = builtin("two_arm_bandit")
    best = int(np.argmax(sc.bandit.ground_truth))
    rows = []
    for seed in range(args.seeds):
        tr = run_bandit(sc, horizon=args.horizon, seed=seed, m=args.m)
        rows.append((seed, tr.activation_share(best), float(tr.outcome.sum()), float(tr.transfers.sum())))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(["seed", "better_arm_share", "total_reward", "net_transfer"])
    w.writerows(rows)
    if args.out:
        fh.close()
    print(f"median better-arm share {np.median([r[1] for r in rows]):.3f}", file=sys.stderr)


if __name__ == "__main__":
    main()
