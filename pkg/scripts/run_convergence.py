#!/usr/bin/env python3
"""Reproduce the full convergence study for both element families.

Writes convergence_k1.csv and convergence_k2.csv into --out (default
results/) and prints the aligned tables.  Equivalent to:

    eoflow convergence --degree 1 --levels 6 --out results
    eoflow convergence --degree 2 --levels 5 --out results
"""

import argparse
import sys
import time

from eoflow import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--levels-k1", type=int, default=6)
    parser.add_argument("--levels-k2", type=int, default=5)
    parser.add_argument("--solver", choices=("newton", "picard"),
                        default="newton")
    args = parser.parse_args()

    for degree, levels in ((1, args.levels_k1), (2, args.levels_k2)):
        print(f"== degree k = {degree}, levels = {levels} ==")
        t0 = time.perf_counter()
        rc = cli.main(["convergence", "--degree", str(degree),
                       "--levels", str(levels), "--solver", args.solver,
                       "--out", args.out])
        print(f"   {time.perf_counter() - t0:.1f} s")
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
