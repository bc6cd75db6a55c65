"""Epsilon sweep on a scenario: CSV of K, theta*, F*, worst trace and dV(X)."""

import argparse
import csv
import sys

from fbmax.cli import sweep


def _num(text):
    try:
        return f"{float(text):.4g}"
    except ValueError:
        return text


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="cap_corner")
    ap.add_argument("--values", default="0.2,0.1,0.05,0.02")
    ap.add_argument("--out", default="results/eps_sweep.csv")
    args = ap.parse_args()
    code = sweep(args.scenario, "epsilon", [float(v) for v in args.values.split(",")], args.out)
    if code == 0:
        with open(args.out, newline="") as fh:
            rows = list(csv.reader(fh))
        print("  ".join(f"{c[:12]:>12s}" for c in rows[0]))
        for row in rows[1:]:
            print("  ".join(f"{_num(c):>12s}" for c in row))
    return code


if __name__ == "__main__":
    sys.exit(main())
