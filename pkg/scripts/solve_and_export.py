#!/usr/bin/env python3
"""Solve the benchmark problem once and export fields for a VTK viewer.

Runs the manufactured-data problem on an n x n mesh, writes solution.vtk
(velocity, pressure, potential point data) plus report.json with the
iteration history and small-data diagnostics, then prints a comparison
of Newton and fixed-point iteration counts on the same mesh.
"""

import argparse
import sys

from eoflow import cli
from eoflow.mesh import build_unit_square_mesh
from eoflow.mms import manufactured_problem
from eoflow.solver import newton_solve, picard_solve


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=16)
    parser.add_argument("--degree", type=int, default=1)
    parser.add_argument("--out", default="results/solve")
    args = parser.parse_args()

    rc = cli.main(["solve", "--n", str(args.n), "--degree",
                   str(args.degree), "--out", args.out])
    if rc != 0:
        return rc

    cfg, _ = manufactured_problem()
    mesh = build_unit_square_mesh(args.n)
    for name, solve in (("newton", newton_solve), ("picard", picard_solve)):
        _, report = solve(cfg, mesh, args.degree)
        print(f"{name}: {report.iterations} iterations, "
              f"final residual {report.residuals[-1]:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
