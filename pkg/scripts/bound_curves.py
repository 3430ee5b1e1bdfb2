"""Write the converse and achievable rate curves for a few noise levels as CSV."""

import argparse
import sys

import numpy as np

from noisygt.theory import Curve, rate_curve, write_curve_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rho", type=float, nargs="+", default=[1e-4, 0.01, 0.05, 0.11])
    ap.add_argument("--out", default="-")
    args = ap.parse_args()
    thetas = np.round(np.arange(0.01, 1.0, 0.01), 4)
    points = []
    for rho in args.rho:
        for which in Curve:
            points += rate_curve(rho, thetas, which)
    out = sys.stdout if args.out == "-" else open(args.out, "w")
    write_curve_csv(points, out)


if __name__ == "__main__":
    main()
