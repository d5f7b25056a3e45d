"""Continuous Lagrange finite element spaces on triangle meshes.

A scalar P_m space places equispaced nodes on vertices, edges and cell
interiors; vector spaces interleave the two components of each node
(global DoF = 2*scalar + component).  Global numbering is deterministic:
vertex DoFs first (by vertex index), then edge DoFs (by the lexicographic
edge table, oriented from the lower to the higher vertex index), then
cell-interior DoFs.  Spaces are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import BCType, Mesh, _edge_index, affine_maps


@dataclass(frozen=True)
class ReferenceElement:
    """Equispaced Lagrange basis of degree m on the reference triangle."""

    degree: int
    nodes: np.ndarray = field(init=False)       # (L, 2)
    exponents: np.ndarray = field(init=False)   # (L, 2) monomial powers
    coeffs: np.ndarray = field(init=False)      # (L, L) monomial -> basis

    def __post_init__(self):
        m = self.degree
        if m < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {m}")
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        nodes = [verts[0], verts[1], verts[2]]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            for i in range(1, m):
                nodes.append(verts[a] + (i / m) * (verts[b] - verts[a]))
        for j in range(1, m):
            for i in range(1, m - j):
                nodes.append(np.array([i / m, j / m]))
        nodes = np.asarray(nodes)
        exps = np.array(
            [(a, b) for total in range(m + 1) for b in range(total + 1)
             for a in (total - b,)],
            dtype=int,
        )
        vand = (nodes[:, :1] ** exps[:, 0]) * (nodes[:, 1:] ** exps[:, 1])
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeffs", np.linalg.inv(vand))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def tabulate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Basis values (L, Q) and reference gradients (L, Q, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.exponents[:, 0][:, None]
        b = self.exponents[:, 1][:, None]
        x = pts[:, 0][None, :]
        y = pts[:, 1][None, :]
        mono = x**a * y**b
        dmono_x = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
        dmono_y = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
        vals = self.coeffs.T @ mono
        grads = np.stack([self.coeffs.T @ dmono_x, self.coeffs.T @ dmono_y], axis=2)
        return vals, grads


_REFERENCE_CACHE: dict[int, ReferenceElement] = {}


def reference_element(degree: int) -> ReferenceElement:
    if degree not in _REFERENCE_CACHE:
        _REFERENCE_CACHE[degree] = ReferenceElement(degree)
    return _REFERENCE_CACHE[degree]


@dataclass(frozen=True)
class FeSpace:
    """A C0 Lagrange space bound to a mesh, with its Dirichlet mask."""

    mesh: Mesh
    degree: int
    components: int
    fld: str | None               # "flow", "potential" or None (no mask)
    ref: ReferenceElement = field(repr=False, default=None)
    scalar_cell_dofs: np.ndarray = field(repr=False, default=None)  # (C, L)
    node_coords: np.ndarray = field(repr=False, default=None)       # (S, 2)
    dirichlet_mask: np.ndarray = field(repr=False, default=None)    # (S*comp,)

    @property
    def num_scalar_dofs(self) -> int:
        return len(self.node_coords)

    @property
    def num_dofs(self) -> int:
        return self.components * self.num_scalar_dofs

    @property
    def cell_dofs(self) -> np.ndarray:
        """Per-cell global DoFs, (C, L*components); components interleaved."""
        if self.components == 1:
            return self.scalar_cell_dofs
        c = self.components
        out = np.repeat(self.scalar_cell_dofs * c, c, axis=1)
        out += np.tile(np.arange(c), self.scalar_cell_dofs.shape[1])
        return out

    def dof_coords(self) -> np.ndarray:
        """Node coordinates per DoF, (num_dofs, 2)."""
        return np.repeat(self.node_coords, self.components, axis=0)

    def num_free_dofs(self) -> int:
        return int(self.num_dofs - np.count_nonzero(self.dirichlet_mask))


def build_space(mesh: Mesh, degree: int, components: int = 1,
                fld: str | None = None) -> FeSpace:
    """Construct a P_degree Lagrange space; Dirichlet mask from ``fld`` tags."""
    if degree < 1:
        raise ValueError(f"space degree must be >= 1, got {degree}")
    if components not in (1, 2):
        raise ValueError("components must be 1 or 2")
    if fld not in (None, "flow", "potential"):
        raise ValueError(f"unknown field {fld!r}")

    m = degree
    ref = reference_element(m)
    V, E, C = mesh.num_vertices, mesh.num_edges, mesh.num_cells
    per_edge = m - 1
    per_cell = (m - 1) * (m - 2) // 2
    num_scalar = V + per_edge * E + per_cell * C

    cells = mesh.cells
    dofs = np.empty((C, ref.num_nodes), dtype=int)
    dofs[:, :3] = cells
    if per_edge:
        for le, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            eidx = mesh.cell_edges[:, le]
            base = V + eidx * per_edge
            forward = cells[:, a] < cells[:, b]
            for i in range(1, m):
                # parameter i/m measured from local vertex a
                t = np.where(forward, i - 1, m - i - 1)
                dofs[:, 3 + le * per_edge + (i - 1)] = base + t
    if per_cell:
        base = V + per_edge * E + per_cell * np.arange(C)
        for s in range(per_cell):
            dofs[:, 3 + 3 * per_edge + s] = base + s

    coords = np.empty((num_scalar, 2))
    coords[:V] = mesh.vertices
    if per_edge:
        lo = mesh.vertices[mesh.edges[:, 0]]
        hi = mesh.vertices[mesh.edges[:, 1]]
        for t in range(per_edge):
            coords[V + np.arange(E) * per_edge + t] = (
                lo + ((t + 1) / m) * (hi - lo)
            )
    if per_cell:
        jac, _, _ = affine_maps(mesh)
        p0 = mesh.vertices[cells[:, 0]]
        interior = ref.nodes[3 + 3 * per_edge:]
        for s in range(per_cell):
            pts = p0 + jac @ interior[s]
            coords[V + per_edge * E + per_cell * np.arange(C) + s] = pts

    mask = np.zeros(num_scalar, dtype=bool)
    if fld is not None:
        for facet in mesh.facets:
            if facet.bc(fld) is not BCType.DIRICHLET:
                continue
            v0, v1 = facet.vertices
            mask[v0] = mask[v1] = True
            if per_edge:
                eidx = _edge_index(mesh, (v0, v1))
                mask[V + eidx * per_edge: V + (eidx + 1) * per_edge] = True
    if components > 1:
        mask = np.repeat(mask, components)

    return FeSpace(
        mesh=mesh, degree=m, components=components, fld=fld, ref=ref,
        scalar_cell_dofs=dofs, node_coords=coords, dirichlet_mask=mask,
    )


@dataclass
class SystemState:
    """Coefficient vectors of the three coupled fields."""

    u: np.ndarray
    p: np.ndarray
    psi: np.ndarray

    def copy(self) -> "SystemState":
        return SystemState(self.u.copy(), self.p.copy(), self.psi.copy())


def taylor_hood_spaces(mesh: Mesh, degree: int) -> tuple[FeSpace, FeSpace, FeSpace]:
    """Velocity, pressure and potential spaces of the generalised pair.

    ``degree`` is the pressure degree k: velocity and potential live one
    order higher, which is what makes the pair inf-sup stable.
    """
    if degree < 1:
        raise ValueError(f"pair degree must be >= 1, got {degree}")
    velocity = build_space(mesh, degree + 1, components=2, fld="flow")
    pressure = build_space(mesh, degree, components=1)
    potential = build_space(mesh, degree + 1, components=1, fld="potential")
    return velocity, pressure, potential


def count_free_dofs(velocity: FeSpace, pressure: FeSpace,
                    potential: FeSpace) -> int:
    """Unknowns of the coupled system: all DoFs minus Dirichlet-constrained
    velocity and potential DoFs (the pressure is never constrained)."""
    return (velocity.num_free_dofs() + pressure.num_dofs
            + potential.num_free_dofs())


def interpolate(space: FeSpace, f) -> np.ndarray:
    """Nodal interpolant: coefficient i = f evaluated at node i.

    Scalar ``f`` maps coordinate arrays (x, y) to an array of values;
    vector ``f`` returns shape (2, n).
    """
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    vals = np.asarray(f(x, y), dtype=float)
    if space.components == 1:
        if vals.shape != x.shape:
            vals = np.broadcast_to(vals, x.shape)
        return vals.copy()
    if vals.shape != (2, len(x)):
        vals = np.broadcast_to(vals.reshape(2, -1), (2, len(x)))
    out = np.empty(space.num_dofs)
    out[0::2] = vals[0]
    out[1::2] = vals[1]
    return out


def evaluate(space: FeSpace, coeffs: np.ndarray, cell: int, ref_point):
    """Value and physical gradient of a FE function at a reference point.

    Returns ``(value, grad)``: scalar spaces give a float and shape (2,),
    vector spaces shape (2,) and the Jacobian d(value_i)/d(x_j), (2, 2).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.num_dofs,):
        raise ValueError(
            f"coefficient vector has length {coeffs.shape}, expected "
            f"({space.num_dofs},)"
        )
    if not 0 <= cell < space.mesh.num_cells:
        raise IndexError(f"cell index {cell} out of range")
    vals, grads = space.ref.tabulate(np.asarray(ref_point, dtype=float))
    vals, grads = vals[:, 0], grads[:, 0, :]
    _, inv_t, _ = affine_maps(space.mesh)
    phys = grads @ inv_t[cell].T
    local = coeffs[space.cell_dofs[cell]]
    if space.components == 1:
        return float(local @ vals), local @ phys
    value = np.array([local[0::2] @ vals, local[1::2] @ vals])
    grad = np.stack([local[0::2] @ phys, local[1::2] @ phys])
    return value, grad
