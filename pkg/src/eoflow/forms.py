"""Vectorised assembly of the coupled flow/transport weak forms.

All matrices are returned in CSR format.  Element contributions are
computed for every cell at once with einsum and scattered through a COO
buffer; duplicate entries sum on conversion, which is exactly the usual
local-to-global accumulation.

The discrete unknowns are velocity (vector Lagrange, interleaved
components), pressure and potential (scalar Lagrange).  Coefficient
vectors passed to the nonlinear forms live in the matching space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fe_space import FeSpace
from .mesh import BCType, affine_maps, facet_normal
from .quadrature import MAX_DEGREE, QuadratureRule, edge_rule, triangle_rule


@dataclass(frozen=True)
class ProblemConfig:
    """Physical data of the coupled problem.

    ``f`` maps coordinate arrays (x, y) to body-force components (2, n);
    ``g`` maps them to source values (n,).  ``traction`` and ``flux`` take
    (x, y, normal) and supply the natural boundary data on outflow facets:
    the stress times the normal, and the diffusive flux of the potential.
    Unset callables mean zero data.  ``psi_bounds`` is the interval on
    which the charge nonlinearity is assumed to live; it feeds the
    Lipschitz bound used by the solvability diagnostics.
    """

    mu: float = 1.0
    eps: float = 1.0
    k0: float = 1.0
    k1: float = 1.0
    e_field: tuple[float, float] = (0.0, -1.0)
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    traction: Optional[Callable] = None
    flux: Optional[Callable] = None
    u_dirichlet: Optional[Callable] = None
    psi_dirichlet: Optional[Callable] = None
    poincare: float = 1.0
    sobolev: float = 1.0
    psi_bounds: tuple[float, float] = (-1.0, 1.0)
    slope_bound: Optional[float] = None   # overrides the computed sup of k'
    slope_min: Optional[float] = None     # overrides the computed inf of k'

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError(f"viscosity must be positive, got {self.mu}")
        if self.eps <= 0.0:
            raise ValueError(f"permittivity must be positive, got {self.eps}")
        if self.k0 < 0.0 or self.k1 < 0.0:
            raise ValueError("charge coefficients must be non-negative")
        if self.poincare <= 0.0 or self.sobolev <= 0.0:
            raise ValueError("embedding constants must be positive")
        if not self.psi_bounds[0] <= 0.0 <= self.psi_bounds[1]:
            raise ValueError(
                f"potential bounds must bracket zero, got {self.psi_bounds}"
            )
        if self.slope_bound is not None and self.slope_min is not None:
            if not self.slope_bound >= self.slope_min > 0.0:
                raise ValueError("slope bounds must satisfy sup >= inf > 0")

    @property
    def e_norm(self) -> float:
        return float(np.hypot(self.e_field[0], self.e_field[1]))

    def charge_slope_bound(self) -> float:
        """Largest slope of the charge law on ``psi_bounds``."""
        if self.slope_bound is not None:
            return self.slope_bound
        a, b = self.psi_bounds
        return float(self.k0 * self.k1 * np.cosh(self.k1 * max(abs(a), abs(b))))

    def charge_slope_min(self) -> float:
        """Smallest slope of the charge law on ``psi_bounds`` (cosh dips at 0)."""
        if self.slope_min is not None:
            return self.slope_min
        return self.k0 * self.k1


def charge_density(cfg: ProblemConfig, psi):
    """Charge law k0*sinh(k1*psi), elementwise."""
    return cfg.k0 * np.sinh(cfg.k1 * np.asarray(psi, dtype=float))


def charge_density_deriv(cfg: ProblemConfig, psi):
    """Slope of the charge law, k0*k1*cosh(k1*psi)."""
    return cfg.k0 * cfg.k1 * np.cosh(cfg.k1 * np.asarray(psi, dtype=float))


# ---------------------------------------------------------------------------
# assembly plumbing

def _default_qdegree(*spaces: FeSpace) -> int:
    return min(MAX_DEGREE, 2 * max(s.degree for s in spaces) + 2)


def _tabulations(space: FeSpace, rule: QuadratureRule, inv_t: np.ndarray):
    """Basis values (L, Q) and physical gradients (C, L, Q, 2)."""
    vals, ref_grads = space.ref.tabulate(rule.points)
    phys = np.einsum("cik,lqk->clqi", inv_t, ref_grads)
    return vals, phys


def _check_coeffs(space: FeSpace, coeffs, name: str) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.num_dofs,):
        raise ValueError(
            f"{name} has shape {coeffs.shape}, expected ({space.num_dofs},)"
        )
    return coeffs


def _scatter_matrix(rows: np.ndarray, cols: np.ndarray, elem: np.ndarray,
                    shape: tuple[int, int]) -> sp.csr_matrix:
    r = np.broadcast_to(rows[:, :, None], elem.shape)
    c = np.broadcast_to(cols[:, None, :], elem.shape)
    mat = sp.coo_matrix((elem.ravel(), (r.ravel(), c.ravel())), shape=shape)
    return mat.tocsr()


def _scatter_vector(dofs: np.ndarray, elem: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    np.add.at(out, dofs, elem)
    return out


def _physical_points(mesh, rule: QuadratureRule, jac: np.ndarray) -> np.ndarray:
    p0 = mesh.vertices[mesh.cells[:, 0]]
    return p0[:, None, :] + np.einsum("cij,qj->cqi", jac, rule.points)


def evaluate_at_quadrature(space: FeSpace, coeffs, rule: QuadratureRule):
    """FE function values and gradients at the rule's points per cell.

    Scalar spaces return shapes (C, Q) and (C, Q, 2); vector spaces
    (C, Q, 2) and (C, Q, 2, 2) with gradient index order (component,
    direction).
    """
    coeffs = _check_coeffs(space, coeffs, "coefficient vector")
    _, inv_t, _ = affine_maps(space.mesh)
    vals, grads = _tabulations(space, rule, inv_t)
    if space.components == 1:
        local = coeffs[space.scalar_cell_dofs]
        return (np.einsum("cl,lq->cq", local, vals),
                np.einsum("cl,clqi->cqi", local, grads))
    local = coeffs[space.cell_dofs]
    local = local.reshape(local.shape[0], -1, 2)     # (C, L, comp)
    return (np.einsum("cla,lq->cqa", local, vals),
            np.einsum("cla,clqj->cqaj", local, grads))


# ---------------------------------------------------------------------------
# bilinear blocks

def assemble_stiffness(space: FeSpace, coeff: float = 1.0,
                       qdegree: int | None = None) -> sp.csr_matrix:
    """coeff * integral of grad(trial) : grad(test), scalar or vector."""
    rule = triangle_rule(qdegree or _default_qdegree(space))
    _, inv_t, det = affine_maps(space.mesh)
    _, grads = _tabulations(space, rule, inv_t)
    elem = coeff * np.einsum("q,c,ciqd,cjqd->cij", rule.weights, det,
                             grads, grads, optimize=True)
    n = space.num_scalar_dofs * space.components
    if space.components == 1:
        return _scatter_matrix(space.scalar_cell_dofs, space.scalar_cell_dofs,
                               elem, (n, n))
    out = sp.csr_matrix((n, n))
    for comp in range(space.components):
        dofs = space.components * space.scalar_cell_dofs + comp
        out = out + _scatter_matrix(dofs, dofs, elem, (n, n))
    return out


def assemble_mass(space: FeSpace, qdegree: int | None = None) -> sp.csr_matrix:
    """Unweighted mass matrix (block diagonal over vector components)."""
    rule = triangle_rule(qdegree or _default_qdegree(space))
    _, _, det = affine_maps(space.mesh)
    vals, _ = space.ref.tabulate(rule.points)
    elem = np.einsum("q,c,iq,jq->cij", rule.weights, det, vals, vals,
                     optimize=True)
    n = space.num_scalar_dofs * space.components
    if space.components == 1:
        return _scatter_matrix(space.scalar_cell_dofs, space.scalar_cell_dofs,
                               elem, (n, n))
    out = sp.csr_matrix((n, n))
    for comp in range(space.components):
        dofs = space.components * space.scalar_cell_dofs + comp
        out = out + _scatter_matrix(dofs, dofs, elem, (n, n))
    return out


def assemble_divergence(velocity: FeSpace, pressure: FeSpace,
                        qdegree: int | None = None) -> sp.csr_matrix:
    """B with rows in the pressure space: B[m, j] = -int q_m div(phi_j)."""
    rule = triangle_rule(qdegree or _default_qdegree(velocity, pressure))
    _, inv_t, det = affine_maps(velocity.mesh)
    pvals, _ = pressure.ref.tabulate(rule.points)
    _, vgrads = _tabulations(velocity, rule, inv_t)
    elem = -np.einsum("q,c,mq,clqb->cmlb", rule.weights, det, pvals, vgrads,
                      optimize=True)
    elem = elem.reshape(elem.shape[0], pvals.shape[0], -1)
    return _scatter_matrix(pressure.scalar_cell_dofs, velocity.cell_dofs,
                           elem, (pressure.num_dofs, velocity.num_dofs))


def assemble_drag_advection(velocity: FeSpace, potential: FeSpace, psi,
                            e_field, qdegree: int | None = None
                            ) -> sp.csr_matrix:
    """Drag operator at a frozen potential: int (u . grad psi)(E . v).

    Rows test functions v, columns trial velocity u.
    """
    rule = triangle_rule(qdegree or _default_qdegree(velocity, potential))
    _, _, det = affine_maps(velocity.mesh)
    vvals, _ = velocity.ref.tabulate(rule.points)
    _, gpsi = evaluate_at_quadrature(potential, psi, rule)
    e = np.asarray(e_field, dtype=float)
    elem = np.einsum("q,c,iq,a,jq,cqb->ciajb", rule.weights, det, vvals, e,
                     vvals, gpsi, optimize=True)
    n = velocity.num_dofs
    elem = elem.reshape(elem.shape[0], 2 * vvals.shape[0], -1)
    return _scatter_matrix(velocity.cell_dofs, velocity.cell_dofs, elem, (n, n))


def assemble_drag_advection_dpsi(velocity: FeSpace, potential: FeSpace, u,
                                 e_field, qdegree: int | None = None
                                 ) -> sp.csr_matrix:
    """Drag linearised in the potential: int (u_h . grad dpsi)(E . v)."""
    rule = triangle_rule(qdegree or _default_qdegree(velocity, potential))
    _, inv_t, det = affine_maps(velocity.mesh)
    vvals, _ = velocity.ref.tabulate(rule.points)
    _, pgrads = _tabulations(potential, rule, inv_t)
    uvals, _ = evaluate_at_quadrature(velocity, u, rule)
    e = np.asarray(e_field, dtype=float)
    elem = np.einsum("q,c,iq,a,cqk,cmqk->ciam", rule.weights, det, vvals, e,
                     uvals, pgrads, optimize=True)
    elem = elem.reshape(elem.shape[0], 2 * vvals.shape[0], -1)
    return _scatter_matrix(velocity.cell_dofs, potential.scalar_cell_dofs,
                           elem, (velocity.num_dofs, potential.num_dofs))


def assemble_charge_coupling(velocity: FeSpace, potential: FeSpace, psi,
                             cfg: ProblemConfig, qdegree: int | None = None
                             ) -> sp.csr_matrix:
    """Sensitivity of the electric body force: int k'(psi_h) dpsi (E . v)."""
    rule = triangle_rule(qdegree or _default_qdegree(velocity, potential))
    _, _, det = affine_maps(velocity.mesh)
    vvals, _ = velocity.ref.tabulate(rule.points)
    pvals, _ = potential.ref.tabulate(rule.points)
    psivals, _ = evaluate_at_quadrature(potential, psi, rule)
    slope = charge_density_deriv(cfg, psivals)
    e = np.asarray(cfg.e_field, dtype=float)
    elem = np.einsum("q,c,cq,iq,a,mq->ciam", rule.weights, det, slope,
                     vvals, e, pvals, optimize=True)
    elem = elem.reshape(elem.shape[0], 2 * vvals.shape[0], -1)
    return _scatter_matrix(velocity.cell_dofs, potential.scalar_cell_dofs,
                           elem, (velocity.num_dofs, potential.num_dofs))


def assemble_potential_advection(potential: FeSpace, velocity: FeSpace, u,
                                 qdegree: int | None = None) -> sp.csr_matrix:
    """Transport of the potential by a frozen velocity: int (u_h . grad psi) phi."""
    rule = triangle_rule(qdegree or _default_qdegree(velocity, potential))
    _, inv_t, det = affine_maps(potential.mesh)
    pvals, _ = potential.ref.tabulate(rule.points)
    _, pgrads = _tabulations(potential, rule, inv_t)
    uvals, _ = evaluate_at_quadrature(velocity, u, rule)
    elem = np.einsum("q,c,mq,cqk,cnqk->cmn", rule.weights, det, pvals,
                     uvals, pgrads, optimize=True)
    n = potential.num_dofs
    return _scatter_matrix(potential.scalar_cell_dofs,
                           potential.scalar_cell_dofs, elem, (n, n))


def assemble_potential_advection_du(potential: FeSpace, velocity: FeSpace,
                                    psi, qdegree: int | None = None
                                    ) -> sp.csr_matrix:
    """Transport linearised in the velocity: int (du . grad psi_h) phi."""
    rule = triangle_rule(qdegree or _default_qdegree(velocity, potential))
    _, _, det = affine_maps(potential.mesh)
    pvals, _ = potential.ref.tabulate(rule.points)
    vvals, _ = velocity.ref.tabulate(rule.points)
    _, gpsi = evaluate_at_quadrature(potential, psi, rule)
    elem = np.einsum("q,c,mq,jq,cqb->cmjb", rule.weights, det, pvals,
                     vvals, gpsi, optimize=True)
    elem = elem.reshape(elem.shape[0], pvals.shape[0], -1)
    return _scatter_matrix(potential.scalar_cell_dofs, velocity.cell_dofs,
                           elem, (potential.num_dofs, velocity.num_dofs))


def assemble_charge_jacobian(potential: FeSpace, psi, cfg: ProblemConfig,
                             qdegree: int | None = None) -> sp.csr_matrix:
    """Mass matrix weighted by the charge-law slope at psi_h."""
    rule = triangle_rule(qdegree or _default_qdegree(potential))
    _, _, det = affine_maps(potential.mesh)
    pvals, _ = potential.ref.tabulate(rule.points)
    psivals, _ = evaluate_at_quadrature(potential, psi, rule)
    slope = charge_density_deriv(cfg, psivals)
    elem = np.einsum("q,c,cq,mq,nq->cmn", rule.weights, det, slope,
                     pvals, pvals, optimize=True)
    n = potential.num_dofs
    return _scatter_matrix(potential.scalar_cell_dofs,
                           potential.scalar_cell_dofs, elem, (n, n))


# ---------------------------------------------------------------------------
# loads and nonlinear residual pieces

def assemble_charge_residual(potential: FeSpace, psi, cfg: ProblemConfig,
                             qdegree: int | None = None) -> np.ndarray:
    """Weak charge term: vector with entries int k(psi_h) phi_m."""
    rule = triangle_rule(qdegree or _default_qdegree(potential))
    _, _, det = affine_maps(potential.mesh)
    pvals, _ = potential.ref.tabulate(rule.points)
    psivals, _ = evaluate_at_quadrature(potential, psi, rule)
    kap = charge_density(cfg, psivals)
    elem = np.einsum("q,c,cq,mq->cm", rule.weights, det, kap, pvals,
                     optimize=True)
    return _scatter_vector(potential.scalar_cell_dofs, elem,
                           potential.num_dofs)


def assemble_momentum_load(velocity: FeSpace, potential: FeSpace, psi,
                           cfg: ProblemConfig, qdegree: int | None = None
                           ) -> np.ndarray:
    """Advection-weighted body force: int (f + (g - k(psi_h)) E) . v.

    The electric contribution carries the full source-minus-charge factor;
    no derivatives of the potential appear.
    """
    rule = triangle_rule(qdegree or _default_qdegree(velocity, potential))
    jac, _, det = affine_maps(velocity.mesh)
    vvals, _ = velocity.ref.tabulate(rule.points)
    psivals, _ = evaluate_at_quadrature(potential, psi, rule)
    pts = _physical_points(velocity.mesh, rule, jac)
    x, y = pts[..., 0].ravel(), pts[..., 1].ravel()

    weight = -charge_density(cfg, psivals)
    if cfg.g is not None:
        weight = weight + np.asarray(cfg.g(x, y), dtype=float).reshape(psivals.shape)
    e = np.asarray(cfg.e_field, dtype=float)
    force = weight[..., None] * e
    if cfg.f is not None:
        fv = np.asarray(cfg.f(x, y), dtype=float)
        force = force + fv.reshape(2, *psivals.shape).transpose(1, 2, 0)

    elem = np.einsum("q,c,cqa,iq->cia", rule.weights, det, force, vvals,
                     optimize=True)
    elem = elem.reshape(elem.shape[0], -1)
    return _scatter_vector(velocity.cell_dofs, elem, velocity.num_dofs)


def assemble_potential_load(potential: FeSpace, g,
                            qdegree: int | None = None) -> np.ndarray:
    """Source load: vector with entries int g phi_m."""
    if g is None:
        return np.zeros(potential.num_dofs)
    rule = triangle_rule(qdegree or _default_qdegree(potential))
    jac, _, det = affine_maps(potential.mesh)
    pvals, _ = potential.ref.tabulate(rule.points)
    pts = _physical_points(potential.mesh, rule, jac)
    gv = np.asarray(g(pts[..., 0].ravel(), pts[..., 1].ravel()), dtype=float)
    gv = gv.reshape(pts.shape[:2])
    elem = np.einsum("q,c,cq,mq->cm", rule.weights, det, gv, pvals,
                     optimize=True)
    return _scatter_vector(potential.scalar_cell_dofs, elem,
                           potential.num_dofs)


def assemble_facet_load(space: FeSpace, data,
                        qdegree: int | None = None) -> np.ndarray:
    """Boundary load over the space's outflow facets.

    ``data(x, y, normal)`` returns (n,) for scalar spaces and (2, n) for
    vector ones; the integral of data times each test function over every
    facet whose tag for ``space.fld`` is NEUMANN is accumulated.
    """
    if space.fld is None:
        raise ValueError("facet loads need a space with a boundary field tag")
    out = np.zeros(space.num_dofs)
    if data is None:
        return out
    rule = edge_rule(qdegree or 2 * space.degree + 2)
    mesh = space.mesh
    _, inv_t, _ = affine_maps(mesh)
    for facet in mesh.facets:
        if facet.bc(space.fld) is not BCType.NEUMANN:
            continue
        a = mesh.vertices[facet.vertices[0]]
        b = mesh.vertices[facet.vertices[1]]
        pts = a + rule.points[:, None] * (b - a)
        length = float(np.hypot(*(b - a)))
        normal = facet_normal(mesh, facet)
        c = facet.cell
        p0 = mesh.vertices[mesh.cells[c, 0]]
        ref = (pts - p0) @ inv_t[c]
        vals, _ = space.ref.tabulate(ref)
        dv = np.asarray(data(pts[:, 0], pts[:, 1], normal), dtype=float)
        w = length * rule.weights
        if space.components == 1:
            out[space.scalar_cell_dofs[c]] += vals @ (w * dv)
        else:
            contrib = np.einsum("iq,aq,q->ia", vals, dv.reshape(2, -1), w)
            out[space.cell_dofs[c]] += contrib.reshape(-1)
    return out


# ---------------------------------------------------------------------------
# system containers

@dataclass(frozen=True)
class SparseSystem:
    """One linearised system over the free DoFs, ordered (u, p, psi).

    The pressure diagonal block is identically zero (saddle point); the
    field slices index into both the matrix and the right-hand side.
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    u_slice: slice
    p_slice: slice
    psi_slice: slice

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError(
                f"system shapes disagree: matrix {self.matrix.shape}, "
                f"rhs {self.rhs.shape}"
            )


@dataclass(frozen=True)
class StaticBlocks:
    """Iteration-independent pieces of the discrete coupled problem."""

    viscous: sp.csr_matrix        # (Nu, Nu) mu-weighted vector stiffness
    divergence: sp.csr_matrix     # (Np, Nu)
    diffusion: sp.csr_matrix      # (Npsi, Npsi) eps-weighted stiffness
    traction_load: np.ndarray     # (Nu,) stress data on outflow facets
    source_load: np.ndarray       # (Npsi,) int g phi plus flux data


def assemble_static_blocks(velocity: FeSpace, pressure: FeSpace,
                           potential: FeSpace, cfg: ProblemConfig,
                           qdegree: int | None = None) -> StaticBlocks:
    qdeg = qdegree or _default_qdegree(velocity, pressure, potential)
    return StaticBlocks(
        viscous=assemble_stiffness(velocity, cfg.mu, qdeg),
        divergence=assemble_divergence(velocity, pressure, qdeg),
        diffusion=assemble_stiffness(potential, cfg.eps, qdeg),
        traction_load=assemble_facet_load(velocity, cfg.traction),
        source_load=(assemble_potential_load(potential, cfg.g, qdeg)
                     + assemble_facet_load(potential, cfg.flux)),
    )


def data_l2_norm(mesh, fn, components: int = 1,
                 qdegree: int = 6) -> float:
    """L2 norm of a data callable over the mesh (0 for fn = None)."""
    if fn is None:
        return 0.0
    rule = triangle_rule(qdegree)
    jac, _, det = affine_maps(mesh)
    pts = _physical_points(mesh, rule, jac)
    vals = np.asarray(fn(pts[..., 0].ravel(), pts[..., 1].ravel()), dtype=float)
    if components == 1:
        sq = vals.reshape(pts.shape[:2]) ** 2
    else:
        sq = (vals.reshape(components, *pts.shape[:2]) ** 2).sum(axis=0)
    return float(np.sqrt(np.einsum("q,c,cq->", rule.weights, det, sq)))
