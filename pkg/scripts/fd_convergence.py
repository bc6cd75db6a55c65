"""Frame identity residual against the foliation step; prints observed orders."""

import argparse
import csv
import math
import sys

from fbmax.cli import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="cap_corner")
    ap.add_argument("--values", default="0.01,0.005,0.0025")
    ap.add_argument("--out", default="results/fd_convergence.csv")
    args = ap.parse_args()
    steps = [float(v) for v in args.values.split(",")]
    code = sweep(args.scenario, "fd_step", steps, args.out)
    if code:
        return code
    with open(args.out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    prev = None
    for r in rows:
        h, med = float(r["fd_step"]), float(r["frame_identity_median"])
        order = "" if prev is None else f"  order {math.log(prev[1] / med) / math.log(prev[0] / h):.2f}"
        print(f"h = {h:<8g} median {med:.3e}  max {float(r['frame_identity_max']):.3e}{order}")
        prev = (h, med)
    return 0


if __name__ == "__main__":
    sys.exit(main())
