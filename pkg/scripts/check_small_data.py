#!/usr/bin/env python3
"""Scan the small-data solvability conditions over a range of data sizes.

For data f = s (1, 0), g = s with amplitude s, print the three condition
left-hand sides and the largest amplitude for which all of them hold.
The bounds are sufficient conditions only, so solves typically succeed
well beyond that amplitude.
"""

import argparse
import sys

import numpy as np

from eoflow.forms import ProblemConfig
from eoflow.solver import small_data_lhs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--amplitudes", type=float, nargs="+",
                        default=[0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0])
    args = parser.parse_args()

    cfg = ProblemConfig()
    slope = cfg.charge_slope_bound()
    print(f"constants: mu={cfg.mu} eps={cfg.eps} |E|={cfg.e_norm} "
          f"slope bound={slope:.4f}")
    print(f"{'s':>8}  {'cond 1':>10}  {'cond 2':>10}  {'cond 3':>10}  ok")
    largest = None
    for s in args.amplitudes:
        f_norm = s                      # |s (1,0)| over the unit square
        g_norm = s
        lhs = small_data_lhs(cfg.mu, cfg.eps, cfg.e_norm, slope,
                             cfg.poincare, cfg.sobolev, f_norm, g_norm)
        ok = lhs[0] <= 1.0 and lhs[1] < 1.0 and lhs[2] <= 1.0
        if ok:
            largest = s
        print(f"{s:8.3f}  {lhs[0]:10.4f}  {lhs[1]:10.4f}  {lhs[2]:10.4f}  "
              f"{'yes' if ok else 'no'}")
    if largest is None:
        print("no tested amplitude satisfies the conditions")
    else:
        print(f"largest amplitude with all conditions satisfied: {largest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
