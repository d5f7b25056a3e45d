"""Monolithic Newton and fixed-point solvers for the coupled system.

Newton linearises the full three-field residual with every coupling
derivative: the drag block in the momentum equation differentiated with
respect to both velocity and potential, the charge-law sensitivity of the
body force, and the velocity derivative of the potential advection.  The
fixed-point variant alternates a nonlinear potential solve at frozen
velocity with a linear flow solve at frozen potential.

Dirichlet data is imposed by lifting: boundary values are interpolated
into the constrained entries and the updates act on free DoFs only, so
converged states carry the exact boundary interpolant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import forms
from .fe_space import FeSpace, SystemState, interpolate, taylor_hood_spaces
from .forms import ProblemConfig, SparseSystem, StaticBlocks
from .mesh import Mesh
from .quadrature import MAX_DEGREE


class LinearSolveError(Exception):
    """Raised when the sparse direct solve fails or cannot be trusted."""


@dataclass
class NonlinearReport:
    """Outcome of a nonlinear solve.

    ``residuals`` holds the Euclidean free-DoF residual norms for Newton
    (initial value first, then one entry per step) and the H1 velocity
    increments for the fixed-point iteration.  The ball flags record
    whether the converged fields sit inside the admissible sets of the
    contraction argument.
    """

    method: str
    converged: bool
    iterations: int
    residuals: list[float]
    psi_range: tuple[float, float]
    u_norm: float
    psi_norm: float
    in_velocity_ball: bool
    in_potential_ball: bool


@dataclass
class DiagnosticsReport:
    """Numerical check of the small-data solvability conditions."""

    f_norm: float
    g_norm: float
    lhs1: float
    lhs2: float
    lhs3: float
    small_data_ok: bool
    velocity_ball_radius: float
    potential_ball_radius: float   # inf when no applied field
    u_norm: float
    psi_norm: float
    in_velocity_ball: bool
    in_potential_ball: bool


def linear_solve(system: SparseSystem) -> np.ndarray:
    """Direct sparse solve with pivoting and a residual trust check."""
    matrix = system.matrix.tocsc()
    try:
        lu = splu(matrix)
    except RuntimeError as exc:
        msg = f"sparse LU factorisation failed: {exc}"
        if system.p_slice.stop > system.p_slice.start:
            msg += ("; a lost pivot in the pressure block usually means the "
                    "velocity/pressure pair is not inf-sup stable")
        raise LinearSolveError(msg) from exc
    x = lu.solve(system.rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("direct solve returned non-finite values")
    residual = np.linalg.norm(system.matrix @ x - system.rhs)
    scale = max(np.linalg.norm(system.rhs), 1.0)
    if residual > 1e-10 * scale:
        raise LinearSolveError(
            f"direct solve relative residual {residual / scale:.3e} exceeds "
            "1e-10; the matrix is singular or severely ill-conditioned")
    return x


def velocity_ball_radius(cfg: ProblemConfig) -> float:
    """Radius of the admissible advecting-velocity set."""
    return cfg.eps / (2.0 * cfg.poincare**2 * cfg.sobolev**2)


def potential_ball_radius(cfg: ProblemConfig) -> float:
    """Radius of the admissible potential set; infinite without a field."""
    if cfg.e_norm == 0.0:
        return math.inf
    return cfg.mu / (2.0 * cfg.poincare**2 * cfg.sobolev**2 * cfg.e_norm)


def small_data_lhs(mu: float, eps: float, e_bar: float, slope_bound: float,
                   poincare: float, sobolev: float, f_norm: float,
                   g_norm: float) -> tuple[float, float, float]:
    """Left-hand sides of the three smallness conditions (bounds are
    1, 1, 1 with the middle one strict)."""
    cp2 = poincare**2
    cs2 = sobolev**2
    front = 4.0 * cp2**2 * cs2
    lhs1 = (front / (mu * eps)
            * (1.0 + e_bar + 2.0 * slope_bound * e_bar * cp2 / eps)
            * (f_norm + g_norm))
    lhs2 = (front * e_bar / (mu * eps**2)
            * (eps + 2.0 * cp2 * slope_bound) * g_norm)
    lhs3 = ((1.0 + 4.0 * slope_bound * e_bar * cp2 / eps)
            * 4.0 * cs2 * cp2 / eps * g_norm)
    return lhs1, lhs2, lhs3


# ---------------------------------------------------------------------------
# shared solve machinery

@dataclass
class _Workspace:
    velocity: FeSpace
    pressure: FeSpace
    potential: FeSpace
    static: StaticBlocks
    qdeg: int
    free_u: np.ndarray
    free_psi: np.ndarray
    u_slice: slice
    p_slice: slice
    psi_slice: slice
    mass_u: sp.csr_matrix
    stiff_u: sp.csr_matrix
    mass_psi: sp.csr_matrix
    stiff_psi: sp.csr_matrix


def _workspace(cfg: ProblemConfig, mesh: Mesh, degree: int,
               qdegree: int | None = None) -> _Workspace:
    velocity, pressure, potential = taylor_hood_spaces(mesh, degree)
    qdeg = qdegree or min(MAX_DEGREE, 2 * (degree + 1) + 2)
    static = forms.assemble_static_blocks(velocity, pressure, potential,
                                          cfg, qdeg)
    free_u = np.flatnonzero(~velocity.dirichlet_mask)
    free_psi = np.flatnonzero(~potential.dirichlet_mask)
    nu, npre = len(free_u), pressure.num_dofs
    return _Workspace(
        velocity=velocity, pressure=pressure, potential=potential,
        static=static, qdeg=qdeg, free_u=free_u, free_psi=free_psi,
        u_slice=slice(0, nu), p_slice=slice(nu, nu + npre),
        psi_slice=slice(nu + npre, nu + npre + len(free_psi)),
        mass_u=forms.assemble_mass(velocity, qdeg),
        stiff_u=static.viscous * (1.0 / cfg.mu),
        mass_psi=forms.assemble_mass(potential, qdeg),
        stiff_psi=static.diffusion * (1.0 / cfg.eps),
    )


def _h1_norm(mass: sp.csr_matrix, stiff: sp.csr_matrix, w: np.ndarray) -> float:
    return float(np.sqrt(w @ (mass @ w) + w @ (stiff @ w)))


def _lifted_state(ws: _Workspace, cfg: ProblemConfig,
                  initial: SystemState | None) -> tuple[np.ndarray, ...]:
    u = np.zeros(ws.velocity.num_dofs)
    p = np.zeros(ws.pressure.num_dofs)
    psi = np.zeros(ws.potential.num_dofs)
    if initial is not None:
        for got, want, name in ((initial.u, u, "u"), (initial.p, p, "p"),
                                (initial.psi, psi, "psi")):
            if np.shape(got) != want.shape:
                raise ValueError(
                    f"initial {name} has shape {np.shape(got)}, expected "
                    f"{want.shape}")
        u[:], p[:], psi[:] = initial.u, initial.p, initial.psi
    mask_u = ws.velocity.dirichlet_mask
    u[mask_u] = (interpolate(ws.velocity, cfg.u_dirichlet)[mask_u]
                 if cfg.u_dirichlet is not None else 0.0)
    mask_psi = ws.potential.dirichlet_mask
    psi[mask_psi] = (interpolate(ws.potential, cfg.psi_dirichlet)[mask_psi]
                     if cfg.psi_dirichlet is not None else 0.0)
    return u, p, psi


def _residual(ws: _Workspace, cfg: ProblemConfig, u, p, psi):
    """Full-length residuals plus the state-dependent blocks they used."""
    st = ws.static
    drag = forms.assemble_drag_advection(ws.velocity, ws.potential, psi,
                                         cfg.e_field, ws.qdeg)
    adv = forms.assemble_potential_advection(ws.potential, ws.velocity, u,
                                             ws.qdeg)
    r_u = (st.viscous @ u + drag @ u + st.divergence.T @ p
           - forms.assemble_momentum_load(ws.velocity, ws.potential, psi,
                                          cfg, ws.qdeg)
           - st.traction_load)
    r_p = st.divergence @ u
    r_psi = (st.diffusion @ psi + adv @ psi
             + forms.assemble_charge_residual(ws.potential, psi, cfg, ws.qdeg)
             - st.source_load)
    return r_u, r_p, r_psi, drag, adv


def _reduce(ws: _Workspace, r_u, r_p, r_psi) -> np.ndarray:
    return np.concatenate([r_u[ws.free_u], r_p, r_psi[ws.free_psi]])


def _jacobian(ws: _Workspace, cfg: ProblemConfig, u, psi, drag, adv
              ) -> sp.csr_matrix:
    st = ws.static
    iu, ipsi = ws.free_u, ws.free_psi
    j_uu = (st.viscous + drag)[iu][:, iu]
    j_up = st.divergence.T.tocsr()[iu]
    j_upsi = (forms.assemble_drag_advection_dpsi(ws.velocity, ws.potential, u,
                                                 cfg.e_field, ws.qdeg)
              + forms.assemble_charge_coupling(ws.velocity, ws.potential, psi,
                                               cfg, ws.qdeg))[iu][:, ipsi]
    j_pu = st.divergence[:, iu]
    j_psiu = forms.assemble_potential_advection_du(
        ws.potential, ws.velocity, psi, ws.qdeg)[ipsi][:, iu]
    j_psipsi = (st.diffusion + adv
                + forms.assemble_charge_jacobian(ws.potential, psi, cfg,
                                                 ws.qdeg))[ipsi][:, ipsi]
    return sp.bmat([[j_uu, j_up, j_upsi],
                    [j_pu, None, None],
                    [j_psiu, None, j_psipsi]], format="csr")


def _report(method: str, ws: _Workspace, cfg: ProblemConfig,
            state: SystemState, converged: bool, iterations: int,
            history: list[float]) -> NonlinearReport:
    u_norm = _h1_norm(ws.mass_u, ws.stiff_u, state.u)
    psi_norm = _h1_norm(ws.mass_psi, ws.stiff_psi, state.psi)
    return NonlinearReport(
        method=method, converged=converged, iterations=iterations,
        residuals=history,
        psi_range=(float(state.psi.min()), float(state.psi.max())),
        u_norm=u_norm, psi_norm=psi_norm,
        in_velocity_ball=bool(u_norm <= velocity_ball_radius(cfg)),
        in_potential_ball=bool(psi_norm <= potential_ball_radius(cfg)),
    )


# ---------------------------------------------------------------------------
# public solvers

def newton_system(cfg: ProblemConfig, mesh: Mesh, degree: int,
                  state: SystemState, qdegree: int | None = None
                  ) -> SparseSystem:
    """Linearised coupled system at an arbitrary state.

    The right-hand side is minus the assembled residual, so solving gives
    the Newton correction.  Mainly for verification against finite
    differences.
    """
    ws = _workspace(cfg, mesh, degree, qdegree)
    r_u, r_p, r_psi, drag, adv = _residual(ws, cfg, state.u, state.p,
                                           state.psi)
    jac = _jacobian(ws, cfg, state.u, state.psi, drag, adv)
    return SparseSystem(jac, -_reduce(ws, r_u, r_p, r_psi),
                        ws.u_slice, ws.p_slice, ws.psi_slice)


def newton_solve(cfg: ProblemConfig, mesh: Mesh, degree: int,
                 tol: float = 1e-7, maxit: int = 25,
                 initial: SystemState | None = None,
                 qdegree: int | None = None
                 ) -> tuple[SystemState, NonlinearReport]:
    """Solve the coupled system by Newton's method with analytic Jacobian.

    ``degree`` is the pressure degree of the mixed pair.  At least one
    step is always taken; iterations counts the linear solves performed.
    Non-convergence is reported, not raised; a singular Jacobian raises
    LinearSolveError.
    """
    ws = _workspace(cfg, mesh, degree, qdegree)
    u, p, psi = _lifted_state(ws, cfg, initial)
    history: list[float] = []
    converged = False
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore"):
        r_u, r_p, r_psi, drag, adv = _residual(ws, cfg, u, p, psi)
        reduced = _reduce(ws, r_u, r_p, r_psi)
        res = float(np.linalg.norm(reduced))
        history.append(res)
        for it in range(1, maxit + 1):
            if not np.isfinite(res):
                break                      # charge-law overflow: diverged
            jac = _jacobian(ws, cfg, u, psi, drag, adv)
            system = SparseSystem(jac, -reduced, ws.u_slice, ws.p_slice,
                                  ws.psi_slice)
            delta = linear_solve(system)
            u[ws.free_u] += delta[ws.u_slice]
            p += delta[ws.p_slice]
            psi[ws.free_psi] += delta[ws.psi_slice]
            r_u, r_p, r_psi, drag, adv = _residual(ws, cfg, u, p, psi)
            reduced = _reduce(ws, r_u, r_p, r_psi)
            res = float(np.linalg.norm(reduced))
            history.append(res)
            iterations = it
            if res <= tol:
                converged = True
                break
    state = SystemState(u, p, psi)
    return state, _report("newton", ws, cfg, state, converged, iterations,
                          history)


def _potential_subsolve(ws: _Workspace, cfg: ProblemConfig, u, psi,
                        tol: float, maxit: int = 25):
    """Inner Newton for the potential equation at frozen velocity."""
    ipsi = ws.free_psi
    nfree = len(ipsi)
    adv = forms.assemble_potential_advection(ws.potential, ws.velocity, u,
                                             ws.qdeg)
    fixed = ws.static.diffusion + adv
    psi = psi.copy()
    for _ in range(maxit + 1):
        r = (fixed @ psi
             + forms.assemble_charge_residual(ws.potential, psi, cfg, ws.qdeg)
             - ws.static.source_load)[ipsi]
        if not np.all(np.isfinite(r)):
            return psi, False
        if np.linalg.norm(r) <= tol:
            return psi, True
        jac = (fixed + forms.assemble_charge_jacobian(ws.potential, psi, cfg,
                                                      ws.qdeg))[ipsi][:, ipsi]
        system = SparseSystem(jac, -r, slice(0, 0), slice(0, 0),
                              slice(0, nfree))
        psi[ipsi] += linear_solve(system)
    return psi, False


def _flow_subsolve(ws: _Workspace, cfg: ProblemConfig, psi, u, p):
    """Linear flow solve at frozen potential (one exact correction)."""
    st = ws.static
    iu = ws.free_u
    nu, npre = len(iu), ws.pressure.num_dofs
    drag = forms.assemble_drag_advection(ws.velocity, ws.potential, psi,
                                         cfg.e_field, ws.qdeg)
    momentum = st.viscous + drag
    load = (forms.assemble_momentum_load(ws.velocity, ws.potential, psi,
                                         cfg, ws.qdeg) + st.traction_load)
    r_u = (momentum @ u + st.divergence.T @ p - load)[iu]
    r_p = st.divergence @ u
    mat = sp.bmat([[momentum[iu][:, iu], st.divergence.T.tocsr()[iu]],
                   [st.divergence[:, iu], None]], format="csr")
    system = SparseSystem(mat, -np.concatenate([r_u, r_p]),
                          slice(0, nu), slice(nu, nu + npre),
                          slice(nu + npre, nu + npre))
    delta = linear_solve(system)
    u, p = u.copy(), p.copy()
    u[iu] += delta[:nu]
    p += delta[nu:]
    return u, p


def picard_solve(cfg: ProblemConfig, mesh: Mesh, degree: int,
                 tol: float = 1e-7, maxit: int = 50,
                 initial: SystemState | None = None,
                 qdegree: int | None = None
                 ) -> tuple[SystemState, NonlinearReport]:
    """Fixed-point iteration on the decoupled solve map.

    Each sweep solves the potential equation at the current velocity
    (inner Newton, tolerance tol/10) and then the linear flow problem at
    the new potential; it stops when the H1 velocity increment drops to
    tol.  ``residuals`` in the report holds the increment history.
    """
    ws = _workspace(cfg, mesh, degree, qdegree)
    u, p, psi = _lifted_state(ws, cfg, initial)
    history: list[float] = []
    converged = False
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, maxit + 1):
            u_prev = u
            psi, inner_ok = _potential_subsolve(ws, cfg, u, psi, tol / 10.0)
            if not inner_ok:
                iterations = it
                break
            u, p = _flow_subsolve(ws, cfg, psi, u, p)
            inc = _h1_norm(ws.mass_u, ws.stiff_u, u - u_prev)
            history.append(float(inc))
            iterations = it
            if inc <= tol:
                converged = True
                break
    state = SystemState(u, p, psi)
    return state, _report("picard", ws, cfg, state, converged, iterations,
                          history)


def small_data_diagnostics(cfg: ProblemConfig, mesh: Mesh, degree: int,
                           state: SystemState) -> DiagnosticsReport:
    """Evaluate the smallness conditions and ball memberships of a state."""
    velocity, _, potential = taylor_hood_spaces(mesh, degree)
    qdeg = min(MAX_DEGREE, 2 * (degree + 1) + 2)
    f_norm = forms.data_l2_norm(mesh, cfg.f, components=2, qdegree=qdeg)
    g_norm = forms.data_l2_norm(mesh, cfg.g, components=1, qdegree=qdeg)
    lhs1, lhs2, lhs3 = small_data_lhs(
        cfg.mu, cfg.eps, cfg.e_norm, cfg.charge_slope_bound(),
        cfg.poincare, cfg.sobolev, f_norm, g_norm)
    u_norm = _h1_norm(forms.assemble_mass(velocity, qdeg),
                      forms.assemble_stiffness(velocity, 1.0, qdeg), state.u)
    psi_norm = _h1_norm(forms.assemble_mass(potential, qdeg),
                        forms.assemble_stiffness(potential, 1.0, qdeg),
                        state.psi)
    w_radius = velocity_ball_radius(cfg)
    z_radius = potential_ball_radius(cfg)
    return DiagnosticsReport(
        f_norm=f_norm, g_norm=g_norm, lhs1=lhs1, lhs2=lhs2, lhs3=lhs3,
        small_data_ok=bool(lhs1 <= 1.0 and lhs2 < 1.0 and lhs3 <= 1.0),
        velocity_ball_radius=w_radius, potential_ball_radius=z_radius,
        u_norm=u_norm, psi_norm=psi_norm,
        in_velocity_ball=bool(u_norm <= w_radius),
        in_potential_ball=bool(psi_norm <= z_radius),
    )
