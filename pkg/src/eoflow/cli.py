"""Command-line entry point: configs, solves, studies, field output.

Three subcommands share one flat TOML config (all keys optional, flags
override):

    solve        solve once on an n x n mesh, write VTK + a JSON report
    convergence  run the refinement study, write CSV + print the table
    diagnose     evaluate the small-data conditions without solving

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from . import mms, solver
from .fe_space import FeSpace, SystemState, build_space, reference_element, \
    taylor_hood_spaces
from .forms import ProblemConfig, data_l2_norm
from .mesh import Mesh, build_unit_square_mesh


class ConfigError(ValueError):
    """Raised for malformed, unknown or invalid configuration input."""


_COMMANDS = ("solve", "convergence", "diagnose")
_SOLVERS = ("newton", "picard")
_PROBLEMS = ("manufactured", "zero")


@dataclass(frozen=True)
class RunConfig:
    """Everything one invocation needs: task, discretisation, physics."""

    command: str = "solve"
    degree: int = 1                  # pressure degree k; velocity is k+1
    n: int = 8                       # mesh cells per side for solve/diagnose
    levels: int = 6                  # refinement levels for convergence
    tol: float = 1e-7
    maxit: int = 25
    solver: str = "newton"
    problem: str = "manufactured"
    out: str = "."
    mu: float = 1.0
    eps: float = 1.0
    k0: float = 1.0
    k1: float = 1.0
    e_field: tuple[float, float] = (0.0, -1.0)
    poincare: float = 1.0
    sobolev: float = 1.0

    def __post_init__(self):
        if self.command not in _COMMANDS:
            raise ConfigError(
                f"command must be one of {', '.join(_COMMANDS)}, "
                f"got {self.command!r}")
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if not self.tol > 0.0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.maxit < 1:
            raise ConfigError(f"maxit must be >= 1, got {self.maxit}")
        if self.solver not in _SOLVERS:
            raise ConfigError(
                f"solver must be one of {', '.join(_SOLVERS)}, "
                f"got {self.solver!r}")
        if self.problem not in _PROBLEMS:
            raise ConfigError(
                f"problem must be one of {', '.join(_PROBLEMS)}, "
                f"got {self.problem!r}")
        if not self.out:
            raise ConfigError("out must be a non-empty directory path")
        if not self.mu > 0.0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if not self.eps > 0.0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.k0 < 0.0:
            raise ConfigError(f"k0 must be >= 0, got {self.k0}")
        if self.k1 < 0.0:
            raise ConfigError(f"k1 must be >= 0, got {self.k1}")
        if len(self.e_field) != 2 or not all(
                math.isfinite(c) for c in self.e_field):
            raise ConfigError(f"e_field must be two finite numbers, "
                              f"got {self.e_field!r}")
        if not self.poincare > 0.0:
            raise ConfigError(f"poincare must be positive, got {self.poincare}")
        if not self.sobolev > 0.0:
            raise ConfigError(f"sobolev must be positive, got {self.sobolev}")

    def problem_config(self) -> ProblemConfig:
        """Physical constants as a bare (data-free) problem description."""
        return ProblemConfig(mu=self.mu, eps=self.eps, k0=self.k0, k1=self.k1,
                             e_field=self.e_field, poincare=self.poincare,
                             sobolev=self.sobolev)


# ---------------------------------------------------------------------------
# config file parsing


def _line_of(text: str, key: str) -> str:
    """Best-effort line locator for error messages."""
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    match = pattern.search(text)
    if match is None:
        return "?"
    return str(text.count("\n", 0, match.start()) + 1)


def _as_int(key: str, value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: {key} must be an integer, "
                          f"got {value!r}")
    return value


def _as_float(key: str, value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
    return float(value)


def _as_str(key: str, value, where: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{where}: {key} must be a string, got {value!r}")
    return value


def _as_pair(key: str, value, where: str) -> tuple[float, float]:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float))
                   for v in value)):
        raise ConfigError(f"{where}: {key} must be a list of two numbers, "
                          f"got {value!r}")
    return (float(value[0]), float(value[1]))


_COERCERS = {
    "command": _as_str,
    "degree": _as_int,
    "n": _as_int,
    "levels": _as_int,
    "tol": _as_float,
    "maxit": _as_int,
    "solver": _as_str,
    "problem": _as_str,
    "out": _as_str,
    "mu": _as_float,
    "eps": _as_float,
    "k0": _as_float,
    "k1": _as_float,
    "e_field": _as_pair,
    "poincare": _as_float,
    "sobolev": _as_float,
}


def config_from_mapping(raw: dict, text: str = "",
                        name: str = "<config>") -> RunConfig:
    """Validate a parsed TOML table and build a RunConfig."""
    values = {}
    for key, value in raw.items():
        coerce = _COERCERS.get(key)
        if coerce is None:
            raise ConfigError(
                f"{name}:{_line_of(text, key)}: unknown key {key!r}")
        values[key] = coerce(key, value, f"{name}:{_line_of(text, key)}")
    try:
        return RunConfig(**values)
    except ConfigError as exc:
        # invariant messages start with the offending key; add its line
        key = str(exc).split()[0]
        if key in values:
            raise ConfigError(f"{name}:{_line_of(text, key)}: {exc}") from None
        raise


def parse_config(path) -> RunConfig:
    """Read a TOML config file; errors carry file and line information."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from exc
    return config_from_mapping(raw, text=text, name=str(path))


def write_config(cfg: RunConfig) -> str:
    """Serialise a RunConfig to TOML; parse_config inverts this exactly."""
    lines = [
        f"command = {json.dumps(cfg.command)}",
        f"degree = {cfg.degree}",
        f"n = {cfg.n}",
        f"levels = {cfg.levels}",
        f"tol = {cfg.tol!r}",
        f"maxit = {cfg.maxit}",
        f"solver = {json.dumps(cfg.solver)}",
        f"problem = {json.dumps(cfg.problem)}",
        f"out = {json.dumps(cfg.out)}",
        f"mu = {cfg.mu!r}",
        f"eps = {cfg.eps!r}",
        f"k0 = {cfg.k0!r}",
        f"k1 = {cfg.k1!r}",
        f"e_field = [{cfg.e_field[0]!r}, {cfg.e_field[1]!r}]",
        f"poincare = {cfg.poincare!r}",
        f"sobolev = {cfg.sobolev!r}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# VTK output


def _scalar_dof_count(mesh: Mesh, degree: int) -> int:
    V, E, C = len(mesh.vertices), len(mesh.edges), len(mesh.cells)
    return V + E * (degree - 1) + C * (degree - 1) * (degree - 2) // 2


def _infer_degree(mesh: Mesh, state: SystemState) -> int:
    for k in range(1, 9):
        if (len(state.u) == 2 * _scalar_dof_count(mesh, k + 1)
                and len(state.p) == _scalar_dof_count(mesh, k)
                and len(state.psi) == _scalar_dof_count(mesh, k + 1)):
            return k
    raise ValueError("state sizes do not match any Taylor-Hood degree "
                     "on this mesh")


def _lattice_triangles(refine: int) -> np.ndarray:
    """Split the reference lattice of degree `refine` into subtriangles,
    indexed in the local node ordering."""
    ref = reference_element(refine)
    index = {}
    for loc, (x, y) in enumerate(ref.nodes):
        index[(round(x * refine), round(y * refine))] = loc
    tris = []
    for j in range(refine):
        for i in range(refine - j):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < refine - 1:
                tris.append((index[(i + 1, j)], index[(i + 1, j + 1)],
                             index[(i, j + 1)]))
    return np.asarray(tris, dtype=int)


def _sample_field(space: FeSpace, coeffs: np.ndarray, aux: FeSpace,
                  table: np.ndarray) -> np.ndarray:
    """Evaluate a finite element field at the sampling nodes.

    `table` holds the space's basis values at the aux element's reference
    nodes, shape (L, L_aux).  Shared nodes are written more than once;
    continuity makes the copies agree.
    """
    out = np.zeros((aux.num_scalar_dofs, space.components))
    for comp in range(space.components):
        nodal = coeffs[space.cell_dofs[:, comp::space.components]]
        out[aux.scalar_cell_dofs, comp] = nodal @ table
    return out


def write_vtk(mesh: Mesh, state: SystemState, path,
              degree: Optional[int] = None,
              refine: Optional[int] = None) -> None:
    """Write the fields as a legacy ASCII VTK unstructured grid.

    Higher-order fields are sampled at the unique nodes of a uniform
    `refine`-fold split of each cell (default 1: mesh vertices only) and
    written as P1 data on the subtriangles.
    """
    if degree is None:
        degree = _infer_degree(mesh, state)
    if refine is None:
        refine = 1
    velocity, pressure, potential = taylor_hood_spaces(mesh, degree)
    aux = build_space(mesh, refine)
    aux_nodes = reference_element(refine).nodes
    vel = _sample_field(velocity, state.u, aux,
                        velocity.ref.tabulate(aux_nodes)[0])
    pre = _sample_field(pressure, state.p, aux,
                        pressure.ref.tabulate(aux_nodes)[0])
    pot = _sample_field(potential, state.psi, aux,
                        potential.ref.tabulate(aux_nodes)[0])
    conn = aux.scalar_cell_dofs[:, _lattice_triangles(refine)].reshape(-1, 3)

    points = aux.node_coords
    lines = ["# vtk DataFile Version 3.0", "eoflow fields", "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(points)} double"]
    lines += [f"{x:.10g} {y:.10g} 0" for x, y in points]
    lines.append(f"CELLS {len(conn)} {4 * len(conn)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in conn]
    lines.append(f"CELL_TYPES {len(conn)}")
    lines += ["5"] * len(conn)
    lines.append(f"POINT_DATA {len(points)}")
    lines.append("VECTORS velocity double")
    lines += [f"{ux:.10g} {uy:.10g} 0" for ux, uy in vel]
    for label, vals in (("pressure", pre), ("potential", pot)):
        lines.append(f"SCALARS {label} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{v:.10g}" for v in vals[:, 0]]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _build_problem(cfg: RunConfig):
    """Turn a RunConfig into (ProblemConfig with data, exact-or-None)."""
    base = cfg.problem_config()
    if cfg.problem == "manufactured":
        return mms.manufactured_problem(base)
    return base, None


def _radius_json(radius: float):
    return "unconditional" if math.isinf(radius) else radius


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _solve_payload(cfg: RunConfig, report: solver.NonlinearReport,
                   diag: Optional[solver.DiagnosticsReport]) -> dict:
    payload = {
        "command": "solve",
        "problem": cfg.problem,
        "solver": report.method,
        "degree": cfg.degree,
        "n": cfg.n,
        "converged": bool(report.converged),
        "iterations": report.iterations,
        "residuals": [float(r) for r in report.residuals],
        "psi_range": [float(report.psi_range[0]), float(report.psi_range[1])],
        "u_norm": float(report.u_norm),
        "psi_norm": float(report.psi_norm),
    }
    if diag is not None:
        payload.update({
            "velocity_ball_radius": float(diag.velocity_ball_radius),
            "potential_ball_radius": _radius_json(diag.potential_ball_radius),
            "in_velocity_ball": bool(diag.in_velocity_ball),
            "in_potential_ball": bool(diag.in_potential_ball),
            "small_data": {
                "f_norm": float(diag.f_norm),
                "g_norm": float(diag.g_norm),
                "lhs1": float(diag.lhs1),
                "lhs2": float(diag.lhs2),
                "lhs3": float(diag.lhs3),
                "satisfied": bool(diag.small_data_ok),
            },
        })
    return payload


def cmd_solve(cfg: RunConfig) -> int:
    """Solve once; write solution.vtk and report.json to the out dir."""
    pcfg, exact = _build_problem(cfg)
    mesh = build_unit_square_mesh(cfg.n)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    solve = solver.newton_solve if cfg.solver == "newton" \
        else solver.picard_solve
    try:
        state, report = solve(pcfg, mesh, cfg.degree, tol=cfg.tol,
                              maxit=cfg.maxit)
    except solver.LinearSolveError as exc:
        payload = {"command": "solve", "problem": cfg.problem,
                   "solver": cfg.solver, "degree": cfg.degree, "n": cfg.n,
                   "converged": False, "error": str(exc)}
        _write_json(out / "report.json", payload)
        print(f"solve failed: {exc}", file=sys.stderr)
        return 1

    diag = solver.small_data_diagnostics(pcfg, mesh, cfg.degree, state)
    payload = _solve_payload(cfg, report, diag)
    if exact is not None:
        e_u, e_p, e_psi = mms.error_norms(mesh, cfg.degree, state, exact)
        payload["errors"] = {"e_u": float(e_u), "e_p": float(e_p),
                             "e_psi": float(e_psi)}
    _write_json(out / "report.json", payload)
    write_vtk(mesh, state, out / "solution.vtk", degree=cfg.degree,
              refine=cfg.degree + 1)

    status = "converged" if report.converged else "did not converge"
    print(f"{report.method} solve, degree {cfg.degree}, n={cfg.n}: {status} "
          f"in {report.iterations} iterations")
    if report.residuals:
        print(f"final residual {report.residuals[-1]:.3e}, "
              f"psi in [{report.psi_range[0]:.4f}, {report.psi_range[1]:.4f}]")
    if "errors" in payload:
        err = payload["errors"]
        print(f"errors vs exact: e(u)={err['e_u']:.3e} "
              f"e(p)={err['e_p']:.3e} e(psi)={err['e_psi']:.3e}")
    print(f"wrote {out / 'solution.vtk'} and {out / 'report.json'}")
    if not report.converged:
        print(f"solver stalled above tolerance {cfg.tol:.1e}",
              file=sys.stderr)
        return 1
    return 0


def cmd_convergence(cfg: RunConfig) -> int:
    """Run the refinement study; write convergence_k{k}.csv."""
    if cfg.problem != "manufactured":
        raise ConfigError("convergence requires problem = \"manufactured\" "
                          "(errors need an exact solution)")
    pcfg, exact = _build_problem(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    failure = None
    try:
        table = mms.run_convergence_study(cfg.degree, cfg.levels, cfg=pcfg,
                                          exact=exact, tol=cfg.tol,
                                          maxit=cfg.maxit, method=cfg.solver)
    except mms.StudyError as exc:
        table, failure = exc.table, str(exc)

    csv_path = out / f"convergence_k{cfg.degree}.csv"
    csv_path.write_text(table.to_csv())
    if table.rows:
        print(table.format_text())
    print(f"wrote {csv_path}")
    if failure is not None:
        print(f"study failed: {failure}", file=sys.stderr)
        return 1
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    """Evaluate the small-data conditions for the configured data."""
    pcfg, _ = _build_problem(cfg)
    mesh = build_unit_square_mesh(cfg.n)
    f_norm = data_l2_norm(mesh, pcfg.f, components=2, qdegree=10)
    g_norm = data_l2_norm(mesh, pcfg.g, components=1, qdegree=10)
    lhs1, lhs2, lhs3 = solver.small_data_lhs(
        pcfg.mu, pcfg.eps, pcfg.e_norm, pcfg.charge_slope_bound(),
        pcfg.poincare, pcfg.sobolev, f_norm, g_norm)
    ok = bool(lhs1 <= 1.0 and lhs2 < 1.0 and lhs3 <= 1.0)
    payload = {
        "command": "diagnose",
        "problem": cfg.problem,
        "n": cfg.n,
        "f_norm": float(f_norm),
        "g_norm": float(g_norm),
        "lhs1": float(lhs1),
        "lhs2": float(lhs2),
        "lhs3": float(lhs3),
        "small_data_ok": ok,
        "velocity_ball_radius": float(solver.velocity_ball_radius(pcfg)),
        "potential_ball_radius": _radius_json(
            solver.potential_ball_radius(pcfg)),
    }
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "diagnostics.json", payload)
    print(f"|f| = {f_norm:.6e}   |g| = {g_norm:.6e}")
    print(f"condition 1: {lhs1:.6e} (need <= 1)")
    print(f"condition 2: {lhs2:.6e} (need < 1)")
    print(f"condition 3: {lhs3:.6e} (need <= 1)")
    radius = payload["potential_ball_radius"]
    radius_txt = radius if isinstance(radius, str) else f"{radius:.6e}"
    print(f"velocity ball radius {payload['velocity_ball_radius']:.6e}, "
          f"potential ball radius {radius_txt}")
    print("small-data conditions " + ("hold" if ok else "violated"))
    print(f"wrote {out / 'diagnostics.json'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eoflow",
        description="Coupled electro-osmotic flow solver on the unit square")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{solve,convergence,diagnose}")
    helps = {
        "solve": "solve once and write VTK fields plus a JSON report",
        "convergence": "run a mesh refinement study and write a CSV table",
        "diagnose": "evaluate the small-data conditions without solving",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", default=None, metavar="PATH",
                       help="TOML config file (flags override it)")
        p.add_argument("--degree", type=int, default=None, metavar="K",
                       help="pressure degree k (velocity/potential are k+1)")
        p.add_argument("--levels", type=int, default=None, metavar="L",
                       help="refinement levels, meshes n = 2 .. 2^L")
        p.add_argument("--n", type=int, default=None, metavar="N",
                       help="mesh cells per side for solve/diagnose")
        p.add_argument("--tol", type=float, default=None, metavar="T",
                       help="nonlinear solver tolerance")
        p.add_argument("--maxit", type=int, default=None, metavar="M",
                       help="nonlinear iteration cap")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory")
        p.add_argument("--solver", choices=_SOLVERS, default=None,
                       help="nonlinear solution method")
        p.add_argument("--problem", choices=_PROBLEMS, default=None,
                       help="data set: manufactured trig fields or zero data")
    return parser


def _merge(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    overrides = {"command": args.command}
    for key in ("degree", "levels", "n", "tol", "maxit", "out", "solver",
                "problem"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return replace(cfg, **overrides)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:               # argparse --help (0) or usage (2)
        return 0 if exc.code in (0, None) else 2
    try:
        cfg = _merge(args)
        if cfg.command == "solve":
            return cmd_solve(cfg)
        if cfg.command == "convergence":
            return cmd_convergence(cfg)
        return cmd_diagnose(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
