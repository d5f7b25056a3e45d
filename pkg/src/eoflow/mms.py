"""Manufactured-solution harness: exact fields, derived data, error norms
and the mesh-refinement study.

The reference fields are the divergence-free swirl

    u = (cos(pi x) sin(pi y), -sin(pi x) cos(pi y)),
    p = sin(pi x) sin(pi y),   psi = cos(pi (x + y)),

whose derivatives are hand-coded below (cross-checked against finite
differences in the tests).  Forcing, Dirichlet and Neumann data are
derived mechanically from the strong equations, so the discretisation
error is the only error in the study.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import forms, solver
from .fe_space import SystemState, interpolate, taylor_hood_spaces
from .forms import ProblemConfig
from .mesh import Mesh, build_unit_square_mesh, mesh_size, affine_maps
from .quadrature import MAX_DEGREE, triangle_rule


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form fields with the derivatives the data derivation needs.

    Conventions: vector values are shaped (2, n), velocity gradients
    (2, 2, n) with index order (component, direction), scalar gradients
    (2, n); all callables accept flat coordinate arrays.
    """

    u: Callable
    grad_u: Callable
    lap_u: Callable
    p: Callable
    grad_p: Callable
    psi: Callable
    grad_psi: Callable
    lap_psi: Callable


def standard_exact_solution() -> ExactSolution:
    """The trigonometric reference fields on the unit square."""
    pi = math.pi

    def u(x, y):
        return np.stack([np.cos(pi * x) * np.sin(pi * y),
                         -np.sin(pi * x) * np.cos(pi * y)])

    def grad_u(x, y):
        cc = np.cos(pi * x) * np.cos(pi * y)
        ss = np.sin(pi * x) * np.sin(pi * y)
        return pi * np.stack([np.stack([-ss, cc]), np.stack([-cc, ss])])

    def lap_u(x, y):
        return -2.0 * pi**2 * u(x, y)

    def p(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def grad_p(x, y):
        return pi * np.stack([np.cos(pi * x) * np.sin(pi * y),
                              np.sin(pi * x) * np.cos(pi * y)])

    def psi(x, y):
        return np.cos(pi * (x + y))

    def grad_psi(x, y):
        s = -pi * np.sin(pi * (x + y))
        return np.stack([s, s])

    def lap_psi(x, y):
        return -2.0 * pi**2 * np.cos(pi * (x + y))

    return ExactSolution(u=u, grad_u=grad_u, lap_u=lap_u, p=p,
                         grad_p=grad_p, psi=psi, grad_psi=grad_psi,
                         lap_psi=lap_psi)


def zero_exact_solution() -> ExactSolution:
    """All fields identically zero (handy for trivial checks)."""
    def vec(x, y):
        return np.stack([np.zeros_like(x), np.zeros_like(y)])

    def ten(x, y):
        z = np.zeros_like(x)
        return np.stack([np.stack([z, z]), np.stack([z, z])])

    def scl(x, y):
        return np.zeros_like(x)

    return ExactSolution(u=vec, grad_u=ten, lap_u=vec, p=scl, grad_p=vec,
                         psi=scl, grad_psi=vec, lap_psi=scl)


def derive_forcing(exact: ExactSolution, cfg: ProblemConfig):
    """Body force and potential source matching the strong equations.

    The momentum equation keeps its original electric-drag form here,
    f = -mu lap(u) + grad(p) + eps lap(psi) E; the solver's rewritten
    weak coupling is algebraically equivalent, which is exactly what the
    convergence study exercises.
    """
    e = np.asarray(cfg.e_field, dtype=float)

    def f(x, y):
        lap = exact.lap_u(np.asarray(x), np.asarray(y))
        return (-cfg.mu * lap + exact.grad_p(x, y)
                + cfg.eps * exact.lap_psi(x, y) * e[:, None])

    def g(x, y):
        x, y = np.asarray(x), np.asarray(y)
        advect = np.einsum("an,an->n", exact.u(x, y), exact.grad_psi(x, y))
        return (forms.charge_density(cfg, exact.psi(x, y)) + advect
                - cfg.eps * exact.lap_psi(x, y))

    return f, g


def neumann_data(exact: ExactSolution, cfg: ProblemConfig, point, normal):
    """Stress and flux data at one boundary point with unit normal."""
    normal = np.asarray(normal, dtype=float)
    if abs(np.hypot(normal[0], normal[1]) - 1.0) > 1e-12:
        raise ValueError(f"normal {normal} is not a unit vector")
    x = np.atleast_1d(np.asarray(point, dtype=float)[0])
    y = np.atleast_1d(np.asarray(point, dtype=float)[1])
    grad = exact.grad_u(x, y)[..., 0]
    traction = cfg.mu * grad @ normal - exact.p(x, y)[0] * normal
    flux = cfg.eps * float(exact.grad_psi(x, y)[:, 0] @ normal)
    return traction, flux


def _traction_fn(exact: ExactSolution, cfg_base: ProblemConfig):
    def traction(x, y, normal):
        grad = exact.grad_u(np.asarray(x), np.asarray(y))
        return (cfg_base.mu * np.einsum("adn,d->an", grad, normal)
                - exact.p(x, y) * np.asarray(normal)[:, None])
    return traction


def _flux_fn(exact: ExactSolution, cfg_base: ProblemConfig):
    def flux(x, y, normal):
        grad = exact.grad_psi(np.asarray(x), np.asarray(y))
        return cfg_base.eps * np.einsum("dn,d->n", grad, normal)
    return flux


def manufactured_problem(base: Optional[ProblemConfig] = None,
                         exact: Optional[ExactSolution] = None
                         ) -> tuple[ProblemConfig, ExactSolution]:
    """Complete a config with all data derived from an exact solution."""
    base = base if base is not None else ProblemConfig()
    exact = exact if exact is not None else standard_exact_solution()
    f, g = derive_forcing(exact, base)
    cfg = dataclasses.replace(
        base, f=f, g=g,
        traction=_traction_fn(exact, base), flux=_flux_fn(exact, base),
        u_dirichlet=exact.u, psi_dirichlet=exact.psi)
    return cfg, exact


def interpolate_exact(mesh: Mesh, degree: int,
                      exact: ExactSolution) -> SystemState:
    """Nodal interpolant of the exact fields in the mixed spaces."""
    velocity, pressure, potential = taylor_hood_spaces(mesh, degree)
    return SystemState(u=interpolate(velocity, exact.u),
                       p=interpolate(pressure, exact.p),
                       psi=interpolate(potential, exact.psi))


def error_norms(mesh: Mesh, degree: int, state: SystemState,
                exact: ExactSolution, qdegree: int | None = None
                ) -> tuple[float, float, float]:
    """H1 velocity, L2 pressure and H1 potential errors of a state."""
    velocity, pressure, potential = taylor_hood_spaces(mesh, degree)
    rule = triangle_rule(qdegree or min(MAX_DEGREE, 2 * (degree + 1) + 2))
    jac, _, det = affine_maps(mesh)
    p0 = mesh.vertices[mesh.cells[:, 0]]
    pts = p0[:, None, :] + np.einsum("cij,qj->cqi", jac, rule.points)
    x, y = pts[..., 0].ravel(), pts[..., 1].ravel()
    shape = pts.shape[:2]
    wdet = rule.weights[None, :] * det[:, None]

    uh, guh = forms.evaluate_at_quadrature(velocity, state.u, rule)
    du = uh - exact.u(x, y).reshape(2, *shape).transpose(1, 2, 0)
    dgu = guh - exact.grad_u(x, y).reshape(2, 2, *shape).transpose(2, 3, 0, 1)
    e_u = np.sqrt(np.sum(wdet * ((du**2).sum(-1) + (dgu**2).sum((-2, -1)))))

    ph, _ = forms.evaluate_at_quadrature(pressure, state.p, rule)
    dp = ph - exact.p(x, y).reshape(shape)
    e_p = np.sqrt(np.sum(wdet * dp**2))

    psih, gpsih = forms.evaluate_at_quadrature(potential, state.psi, rule)
    dpsi = psih - exact.psi(x, y).reshape(shape)
    dgpsi = gpsih - exact.grad_psi(x, y).reshape(2, *shape).transpose(1, 2, 0)
    e_psi = np.sqrt(np.sum(wdet * (dpsi**2 + (dgpsi**2).sum(-1))))
    return float(e_u), float(e_p), float(e_psi)


def convergence_rate(e: float, e_next: float, h: float, h_next: float) -> float:
    """Observed order from two (error, mesh size) pairs."""
    if min(e, e_next, h, h_next) <= 0.0:
        raise ValueError("errors and mesh sizes must be positive")
    if h == h_next:
        raise ValueError("mesh sizes must differ")
    return math.log(e / e_next) / math.log(h / h_next)


@dataclass(frozen=True)
class TableRow:
    dofs: int
    h: float
    e_u: float
    r_u: Optional[float]
    e_p: float
    r_p: Optional[float]
    e_psi: float
    r_psi: Optional[float]
    iterations: int


CSV_HEADER = "DoF,h,e(u),r(u),e(p),r(p),e(psi),r(psi),it"


@dataclass
class ConvergenceTable:
    """Refinement-study results, one row per mesh level."""

    degree: int
    rows: list[TableRow]

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(",".join([
                str(r.dofs), f"{r.h:.4f}",
                f"{r.e_u:.2e}", _fmt_rate(r.r_u),
                f"{r.e_p:.2e}", _fmt_rate(r.r_p),
                f"{r.e_psi:.2e}", _fmt_rate(r.r_psi),
                str(r.iterations),
            ]))
        return "\n".join(lines) + "\n"

    def format_text(self) -> str:
        header = CSV_HEADER.split(",")
        cells = [header] + [[
            str(r.dofs), f"{r.h:.4f}",
            f"{r.e_u:.2e}", _fmt_rate(r.r_u),
            f"{r.e_p:.2e}", _fmt_rate(r.r_p),
            f"{r.e_psi:.2e}", _fmt_rate(r.r_psi),
            str(r.iterations)] for r in self.rows]
        widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths))
                         for row in cells)


def _fmt_rate(r: Optional[float]) -> str:
    return "★" if r is None else f"{r:.3f}"


class StudyError(Exception):
    """A level of the refinement study failed; carries the partial table."""

    def __init__(self, message: str, table: ConvergenceTable):
        super().__init__(message)
        self.table = table


def run_convergence_study(degree: int, levels: int,
                          cfg: Optional[ProblemConfig] = None,
                          exact: Optional[ExactSolution] = None,
                          tol: float = 1e-7, maxit: int = 25,
                          method: str = "newton") -> ConvergenceTable:
    """Solve on meshes n = 2, 4, ..., 2**levels and tabulate errors/rates.

    With no config the study runs the standard manufactured problem with
    unit constants.  A failed or non-converged level raises StudyError
    carrying the rows completed so far.
    """
    if levels < 2:
        raise ValueError(f"need at least 2 levels for rates, got {levels}")
    if method not in ("newton", "picard"):
        raise ValueError(f"unknown method {method!r}")
    if cfg is None or exact is None:
        if cfg is not None or exact is not None:
            raise ValueError("supply cfg and exact together, or neither")
        cfg, exact = manufactured_problem()

    solve = solver.newton_solve if method == "newton" else solver.picard_solve
    table = ConvergenceTable(degree=degree, rows=[])
    prev: Optional[TableRow] = None
    for level in range(1, levels + 1):
        n = 2**level
        mesh = build_unit_square_mesh(n)
        h = mesh_size(mesh)
        spaces = taylor_hood_spaces(mesh, degree)
        dofs = (spaces[0].num_free_dofs() + spaces[1].num_dofs
                + spaces[2].num_free_dofs())
        try:
            state, report = solve(cfg, mesh, degree, tol=tol, maxit=maxit)
        except solver.LinearSolveError as exc:
            raise StudyError(f"level n={n}: {exc}", table) from exc
        if not report.converged:
            raise StudyError(
                f"level n={n}: solver did not reach tolerance {tol:.1e} "
                f"in {report.iterations} iterations", table)
        e_u, e_p, e_psi = error_norms(mesh, degree, state, exact)
        rates = (None, None, None)
        if prev is not None:
            rates = (convergence_rate(prev.e_u, e_u, prev.h, h),
                     convergence_rate(prev.e_p, e_p, prev.h, h),
                     convergence_rate(prev.e_psi, e_psi, prev.h, h))
        row = TableRow(dofs=dofs, h=h, e_u=e_u, r_u=rates[0], e_p=e_p,
                       r_p=rates[1], e_psi=e_psi, r_psi=rates[2],
                       iterations=report.iterations)
        table.rows.append(row)
        prev = row
    return table
