"""Structured unit-square meshes and raw-array construction."""

import numpy as np
import pytest

from eoflow.mesh import (BCType, MeshError, affine_map, affine_maps,
                         build_unit_square_mesh, facet_normal,
                         mesh_from_arrays, mesh_size)


def test_counts_n1():
    mesh = build_unit_square_mesh(1)
    assert mesh.num_vertices == 4
    assert mesh.num_cells == 2
    assert mesh.num_edges == 5
    assert len(mesh.facets) == 4


def test_counts_n2():
    mesh = build_unit_square_mesh(2)
    assert mesh.num_vertices == 9
    assert mesh.num_cells == 8
    assert mesh.num_edges == 16
    assert len(mesh.facets) == 8


def test_vertex_lattice():
    mesh = build_unit_square_mesh(2)
    expected = {(i / 2, j / 2) for i in range(3) for j in range(3)}
    got = {tuple(v) for v in mesh.vertices}
    assert got == expected


def test_diagonal_runs_lower_right_to_upper_left():
    # each square splits along the (1,0)-(0,1) direction; on n=1 the
    # interior edge joins vertices (1,0) and (0,1), not (0,0) and (1,1)
    mesh = build_unit_square_mesh(1)
    boundary = {tuple(sorted(f.vertices)) for f in mesh.facets}
    interior = [tuple(sorted(map(int, e))) for e in mesh.edges
                if tuple(sorted(map(int, e))) not in boundary]
    assert len(interior) == 1
    ends = {tuple(mesh.vertices[v]) for v in interior[0]}
    assert ends == {(1.0, 0.0), (0.0, 1.0)}


def test_positive_orientation_and_uniform_area():
    mesh = build_unit_square_mesh(4)
    _, _, det = affine_maps(mesh)
    assert np.all(det > 0)
    # det is twice the area; every cell covers h^2/2
    assert det == pytest.approx(np.full(mesh.num_cells, 0.25**2), rel=1e-14)


def test_boundary_tags_default():
    mesh = build_unit_square_mesh(4)
    by_side = {}
    for f in mesh.facets:
        by_side.setdefault(f.side, []).append(f)
    assert {s: len(v) for s, v in by_side.items()} == {
        "bottom": 4, "right": 4, "top": 4, "left": 4}
    for f in mesh.facets:
        expected = (BCType.DIRICHLET if f.side in ("bottom", "right")
                    else BCType.NEUMANN)
        assert f.bc("flow") == expected
        assert f.bc("potential") == expected
    with pytest.raises(ValueError):
        mesh.facets[0].bc("temperature")


def test_custom_dirichlet_sides():
    mesh = build_unit_square_mesh(2, dirichlet_sides=("left", "top"))
    for f in mesh.facets:
        expected = (BCType.DIRICHLET if f.side in ("left", "top")
                    else BCType.NEUMANN)
        assert f.flow_bc == expected
    with pytest.raises(MeshError):
        build_unit_square_mesh(2, dirichlet_sides=("north",))
    with pytest.raises(MeshError):
        build_unit_square_mesh(0)


def test_facet_normals_outward_unit():
    mesh = build_unit_square_mesh(2)
    outward = {"bottom": (0, -1), "right": (1, 0), "top": (0, 1),
               "left": (-1, 0)}
    for f in mesh.facets:
        n = facet_normal(mesh, f)
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-14)
        assert n == pytest.approx(np.array(outward[f.side]), abs=1e-14)


def test_mesh_size():
    assert mesh_size(build_unit_square_mesh(4)) == pytest.approx(
        np.sqrt(2) / 4, rel=1e-14)


def test_affine_map_reproduces_vertices():
    mesh = build_unit_square_mesh(3)
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    for c in range(mesh.num_cells):
        amap = affine_map(mesh, c)
        phys = mesh.vertices[mesh.cells[c]]
        mapped = ref @ amap.jac.T + phys[0]
        assert mapped == pytest.approx(phys, abs=1e-14)
        assert amap.det == pytest.approx(np.linalg.det(amap.jac), rel=1e-12)


def test_mesh_from_arrays_validation():
    verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(MeshError):
        mesh_from_arrays(verts, [[0, 2, 1]])        # clockwise cell
    with pytest.raises(MeshError):
        mesh_from_arrays([[0.0], [1.0]], [[0, 1, 0]])
    with pytest.raises(MeshError):
        mesh_from_arrays(verts, [[0, 1]])


def test_mesh_from_arrays_default_tags():
    mesh = mesh_from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                            [[0, 1, 2]])
    assert len(mesh.facets) == 3
    assert all(f.flow_bc == BCType.DIRICHLET for f in mesh.facets)
    assert all(f.potential_bc == BCType.DIRICHLET for f in mesh.facets)


def test_interior_edges_shared_by_two_cells():
    mesh = build_unit_square_mesh(3)
    counts = np.zeros(mesh.num_edges, dtype=int)
    for row in mesh.cell_edges:
        for e in row:
            counts[e] += 1
    boundary = {tuple(sorted(f.vertices)) for f in mesh.facets}
    for e, (v0, v1) in enumerate(mesh.edges):
        expected = 1 if tuple(sorted((int(v0), int(v1)))) in boundary else 2
        assert counts[e] == expected
