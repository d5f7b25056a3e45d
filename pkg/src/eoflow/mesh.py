"""Simplicial 2D meshes with per-field boundary tags.

Meshes are immutable after construction: vertices, triangles, a unique
edge table (needed for mid-edge degrees of freedom) and a list of tagged
boundary facets.  Each boundary facet carries one boundary-condition tag
per physical field (flow and potential), so mixed Dirichlet/Neumann
splits that differ between the fields are representable without any
special casing downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SIDES = ("bottom", "right", "top", "left")


class MeshError(Exception):
    """Raised for invalid or corrupt mesh data."""


class BCType(Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Facet:
    """One boundary edge: vertex pair, owning cell and per-field tags."""

    vertices: tuple[int, int]
    cell: int
    side: str
    flow_bc: BCType
    potential_bc: BCType

    def bc(self, fld: str) -> BCType:
        if fld == "flow":
            return self.flow_bc
        if fld == "potential":
            return self.potential_bc
        raise ValueError(f"unknown field {fld!r}")


@dataclass(frozen=True)
class AffineMap:
    """Reference-to-physical map of one triangle.

    ``jac`` maps reference displacements to physical ones; ``inv_t`` is its
    inverse transpose (pushes reference gradients forward); ``det`` equals
    twice the cell area.
    """

    jac: np.ndarray
    inv_t: np.ndarray
    det: float


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray            # (V, 2) float
    cells: np.ndarray               # (C, 3) int, positively oriented
    facets: tuple[Facet, ...]
    edges: np.ndarray = field(repr=False, default=None)       # (E, 2) int, sorted pairs
    cell_edges: np.ndarray = field(repr=False, default=None)  # (C, 3) int

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_edges(self) -> int:
        return len(self.edges)


def _edge_table(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges and the cell-to-edge map.

    Local edge ``e`` of a cell joins local vertices ``e`` and ``(e+1) % 3``.
    Edges are stored as sorted vertex pairs in lexicographic order, which
    fixes the global numbering of mid-edge DoFs.
    """
    raw = np.concatenate(
        [cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]], axis=0
    )
    raw = np.sort(raw, axis=1)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(3, -1).T.copy()
    return edges, cell_edges


def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p0 = vertices[cells[:, 0]]
    d1 = vertices[cells[:, 1]] - p0
    d2 = vertices[cells[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _validate(mesh: Mesh) -> None:
    areas = _signed_areas(mesh.vertices, mesh.cells)
    if np.any(areas <= 0.0):
        bad = int(np.argmin(areas))
        raise MeshError(f"cell {bad} has non-positive area {areas[bad]:.3e}")

    edge_count = np.zeros(mesh.num_edges, dtype=int)
    for row in mesh.cell_edges:
        edge_count[row] += 1
    boundary = {tuple(e) for e in mesh.edges[edge_count == 1]}
    tagged = [tuple(sorted(f.vertices)) for f in mesh.facets]
    if len(set(tagged)) != len(tagged):
        raise MeshError("duplicate boundary facet")
    if set(tagged) != boundary:
        raise MeshError("facet list does not cover the mesh boundary")
    for f in mesh.facets:
        if edge_count[_edge_index(mesh, f.vertices)] != 1:
            raise MeshError(f"facet {f.vertices} is not a boundary edge")


def _edge_index(mesh: Mesh, pair: tuple[int, int]) -> int:
    key = np.sort(np.asarray(pair))
    idx = np.searchsorted(mesh.edges[:, 0] * (mesh.num_vertices + 1) + mesh.edges[:, 1],
                          key[0] * (mesh.num_vertices + 1) + key[1])
    return int(idx)


def mesh_from_arrays(
    vertices,
    cells,
    tag=None,
) -> Mesh:
    """Build a mesh from raw vertex/cell arrays.

    Boundary facets are detected automatically (edges adjacent to exactly
    one cell).  ``tag`` maps a facet midpoint ``(x, y)`` to a
    ``(side_name, flow_bc, potential_bc)`` triple; by default every facet
    is Dirichlet for both fields.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=int)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (V, 2) array")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("cells must be an (C, 3) array")

    edges, cell_edges = _edge_table(cells)
    edge_count = np.zeros(len(edges), dtype=int)
    edge_cell = np.full(len(edges), -1, dtype=int)
    for c, row in enumerate(cell_edges):
        for e in row:
            edge_count[e] += 1
            edge_cell[e] = c

    facets = []
    for e in np.flatnonzero(edge_count == 1):
        v0, v1 = (int(v) for v in edges[e])
        mid = 0.5 * (vertices[v0] + vertices[v1])
        if tag is None:
            side, fbc, pbc = "boundary", BCType.DIRICHLET, BCType.DIRICHLET
        else:
            side, fbc, pbc = tag(mid[0], mid[1])
        facets.append(Facet((v0, v1), int(edge_cell[e]), side, fbc, pbc))

    mesh = Mesh(vertices, cells, tuple(facets), edges, cell_edges)
    _validate(mesh)
    return mesh


def build_unit_square_mesh(n: int, dirichlet_sides=("bottom", "right")) -> Mesh:
    """Uniform triangulation of the unit square with n cells per side.

    Every lattice square is split along the diagonal joining its
    lower-right and upper-left corners (fixed so results are
    bit-reproducible).  Facets on the sides named in ``dirichlet_sides``
    are Dirichlet for both fields, the rest Neumann for both.
    """
    if n < 1:
        raise MeshError(f"n must be >= 1, got {n}")
    unknown = set(dirichlet_sides) - set(SIDES)
    if unknown:
        raise MeshError(f"unknown side(s) {sorted(unknown)}; valid: {SIDES}")
    dirichlet = frozenset(dirichlet_sides)

    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    # vertex (i, j) at (i/n, j/n) with index i + (n+1)*j
    vertices = np.stack(
        [ii.T.ravel() / n, jj.T.ravel() / n], axis=1
    ).astype(float)

    def vid(i, j):
        return i + (n + 1) * j

    cells = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((v00, v10, v01))   # lower-left triangle
            cells.append((v10, v11, v01))   # upper-right triangle
    cells = np.asarray(cells, dtype=int)

    def classify(x, y):
        tol = 1e-12
        if abs(y) < tol:
            side = "bottom"
        elif abs(x - 1.0) < tol:
            side = "right"
        elif abs(y - 1.0) < tol:
            side = "top"
        elif abs(x) < tol:
            side = "left"
        else:  # pragma: no cover - boundary detection guarantees a side
            raise MeshError(f"boundary facet midpoint ({x}, {y}) not on a side")
        bc = BCType.DIRICHLET if side in dirichlet else BCType.NEUMANN
        return side, bc, bc

    return mesh_from_arrays(vertices, cells, tag=classify)


def mesh_size(mesh: Mesh) -> float:
    """Largest edge length over all cells."""
    if mesh.num_cells == 0:
        raise MeshError("empty mesh")
    d = mesh.vertices[mesh.edges[:, 0]] - mesh.vertices[mesh.edges[:, 1]]
    return float(np.max(np.hypot(d[:, 0], d[:, 1])))


def affine_map(mesh: Mesh, cell: int) -> AffineMap:
    """Affine map of ``cell`` from the reference triangle (0,0),(1,0),(0,1)."""
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell index {cell} out of range")
    p = mesh.vertices[mesh.cells[cell]]
    jac = np.column_stack([p[1] - p[0], p[2] - p[0]])
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    if det <= 0.0:
        raise MeshError(f"cell {cell} is degenerate (det = {det:.3e})")
    inv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
    return AffineMap(jac=jac, inv_t=inv.T, det=det)


def affine_maps(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised affine data for all cells: jacobians, inverse
    transposes and determinants, shapes (C,2,2), (C,2,2), (C,)."""
    p0 = mesh.vertices[mesh.cells[:, 0]]
    d1 = mesh.vertices[mesh.cells[:, 1]] - p0
    d2 = mesh.vertices[mesh.cells[:, 2]] - p0
    jac = np.stack([d1, d2], axis=2)            # columns are edge vectors
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0.0):
        bad = int(np.argmin(det))
        raise MeshError(f"cell {bad} is degenerate (det = {det[bad]:.3e})")
    inv_t = np.empty_like(jac)
    inv_t[:, 0, 0] = jac[:, 1, 1] / det
    inv_t[:, 0, 1] = -jac[:, 1, 0] / det
    inv_t[:, 1, 0] = -jac[:, 0, 1] / det
    inv_t[:, 1, 1] = jac[:, 0, 0] / det
    return jac, inv_t, det


def facet_normal(mesh: Mesh, facet: Facet) -> np.ndarray:
    """Outward unit normal of a boundary facet."""
    a = mesh.vertices[facet.vertices[0]]
    b = mesh.vertices[facet.vertices[1]]
    t = b - a
    n = np.array([t[1], -t[0]])
    n /= np.hypot(n[0], n[1])
    centroid = mesh.vertices[mesh.cells[facet.cell]].mean(axis=0)
    if np.dot(n, 0.5 * (a + b) - centroid) < 0.0:
        n = -n
    return n
