#!/usr/bin/env python3
"""Refit every enrollment and outcome model on generated populations and
report how often the generating coefficient lies inside estimate +/- z*sd.

    python scripts/recovery_experiment.py --seeds 20 --csv coverage.csv
"""
import argparse
import csv
from collections import defaultdict

from sesaa.recovery import coverage_fraction, recovery_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--z", type=float, default=1.96)
    ap.add_argument("--csv", help="write one row per (seed, coefficient)")
    args = ap.parse_args(argv)

    rows = recovery_experiment(range(args.seeds))
    by_model = defaultdict(list)
    for r in rows:
        by_model[(r.model, r.key)].append(r)
    print(f"{'model':11s} {'cell':22s} coverage")
    for (model, key), rs in sorted(by_model.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        print(f"{model:11s} {str(key):22s} {coverage_fraction(rs, args.z):.3f}")
    print(f"overall coverage {coverage_fraction(rows, args.z):.3f} over {len(rows)} coefficients")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "model", "cell", "term", "truth", "estimate", "sd", "covered"])
            for r in rows:
                w.writerow([r.seed, r.model, "/".join(map(str, r.key)), r.term, r.truth,
                            repr(r.estimate), repr(r.sd), r.covered(args.z)])


if __name__ == "__main__":
    main()
