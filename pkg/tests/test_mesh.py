"""Mesh generators, geometry, validation errors and file round-trips."""

import math

import numpy as np
import pytest

from wgstokes.mesh import (
    DisconnectedMeshError,
    DuplicateElementError,
    InvertedElementError,
    Mesh,
    MeshError,
    UnsupportedCellError,
    generate_structured_tet,
    generate_structured_tri,
    load_mesh,
    mesh_stats,
    write_mesh,
)
from wgstokes.quadrature import duffy_rule, map_to_physical


def test_tri_n1_counts():
    m = generate_structured_tri(1)
    assert m.num_elements == 2
    assert m.num_facets == 5
    assert len(m.interior_facets) == 1
    assert len(m.boundary_facets) == 4


def test_tri_n2_counts_and_conformity():
    m = generate_structured_tri(2)
    assert m.num_elements == 8
    inner = m.facet_elems[m.interior_facets]
    assert np.all(inner >= 0)
    assert np.all(inner[:, 0] < inner[:, 1])


def test_tri_h_and_quasi_uniformity():
    m = generate_structured_tri(4)
    s = mesh_stats(m)
    assert s.h == pytest.approx(math.sqrt(2.0) / 4.0)
    assert s.num_elements == 32
    assert s.quasi_uniformity == pytest.approx(1.0)


def test_tet_counts_and_volume():
    m = generate_structured_tet(1)
    assert m.num_elements == 6
    assert m.elem_volumes.sum() == pytest.approx(1.0, abs=1e-14)
    m2 = generate_structured_tet(2)
    assert m2.num_elements == 48
    assert m2.elem_volumes.sum() == pytest.approx(1.0, abs=1e-13)


def test_tet_boundary_area():
    m = generate_structured_tet(3)
    area = m.facet_measures[m.boundary_facets].sum()
    assert area == pytest.approx(6.0, abs=1e-12)


@pytest.mark.parametrize("mesh", [generate_structured_tri(3), generate_structured_tet(2)])
def test_closed_surface_identity(mesh):
    # sum_i |e_i| n_i = 0 on every element
    for k in range(mesh.num_elements):
        g = mesh.element_geometry(k)
        resid = (g.facet_measures[:, None] * g.normals).sum(axis=0)
        assert np.linalg.norm(resid) < 1e-12 * g.facet_measures.sum()


@pytest.mark.parametrize("mesh", [generate_structured_tri(2), generate_structured_tet(1)])
def test_normal_orientation_convention(mesh):
    for f in range(mesh.num_facets):
        rec = mesh.facet(f)
        k0 = rec.elements[0]
        out = rec.barycenter - mesh.elem_centroids[k0]
        assert rec.normal @ out > 0
        assert np.linalg.norm(rec.normal) == pytest.approx(1.0, abs=1e-14)
        if not rec.is_boundary:
            assert rec.elements[0] < rec.elements[1]
            k1 = rec.elements[1]
            assert rec.normal @ (rec.barycenter - mesh.elem_centroids[k1]) < 0


def test_element_sign_flip():
    m = generate_structured_tri(2)
    f = int(m.interior_facets[0])
    k0, k1 = m.facet_elems[f]
    i0 = list(m.elem_facets[k0]).index(f)
    i1 = list(m.elem_facets[k1]).index(f)
    assert m.element_sign(k0, i0) == 1.0
    assert m.element_sign(k1, i1) == -1.0


def test_element_geometry_reference_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = Mesh(verts, np.array([[0, 1, 2]]))
    g = m.element_geometry(0)
    assert g.centroid == pytest.approx([1.0 / 3.0, 1.0 / 3.0])
    assert g.volume == pytest.approx(0.5)
    # second moment against a dense quadrature oracle
    bary, w = duffy_rule(2, 6)
    pts = map_to_physical(verts, bary)
    oracle = g.volume * float(w @ ((pts - g.centroid) ** 2).sum(axis=1))
    assert g.second_moment == pytest.approx(oracle, rel=1e-13)
    assert g.second_moment == pytest.approx(1.0 / 18.0, rel=1e-14)
    assert g.grad_scale == pytest.approx(2.0 * 0.5 / (1.0 / 18.0), rel=1e-14)


def test_second_moment_oracle_tets():
    m = generate_structured_tet(2)
    bary, w = duffy_rule(3, 6)
    rng = np.random.default_rng(3)
    for k in rng.choice(m.num_elements, size=5, replace=False):
        g = m.element_geometry(int(k))
        pts = map_to_physical(g.vertices, bary)
        oracle = g.volume * float(w @ ((pts - g.centroid) ** 2).sum(axis=1))
        assert g.second_moment == pytest.approx(oracle, rel=1e-12)


def test_duplicate_element_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DuplicateElementError):
        Mesh(verts, np.array([[0, 1, 2], [2, 1, 0]]))


def test_inverted_element_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InvertedElementError):
        Mesh(verts, np.array([[0, 2, 1]]))


def test_disconnected_mesh_rejected():
    verts = np.array(
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0], [5.0, 6.0]]
    )
    with pytest.raises(DisconnectedMeshError):
        Mesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))


def test_native_roundtrip(tmp_path):
    m = generate_structured_tri(2)
    path = tmp_path / "mesh.txt"
    write_mesh(m, path)
    m2 = load_mesh(path)
    assert m2.dim == m.dim
    assert np.allclose(m2.vertices, m.vertices)
    assert np.array_equal(m2.elements, m.elements)
    assert np.array_equal(m2.facets, m.facets)


def test_native_roundtrip_tet(tmp_path):
    m = generate_structured_tet(2)
    path = tmp_path / "mesh3d.txt"
    write_mesh(m, path)
    m2 = load_mesh(path, format="native")
    assert np.allclose(m2.vertices, m.vertices)
    assert np.array_equal(m2.elements, m.elements)


def test_gmsh_reader(tmp_path):
    content = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
2
1 2 2 0 1 1 2 3
2 2 2 0 1 1 3 4
$EndElements
"""
    path = tmp_path / "square.msh"
    path.write_text(content)
    m = load_mesh(path)
    assert m.dim == 2
    assert m.num_elements == 2
    assert m.elem_volumes.sum() == pytest.approx(1.0)


def test_gmsh_unsupported_type(tmp_path):
    content = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
2
1 0 0 0
2 1 0 0
$EndNodes
$Elements
1
1 1 2 0 1 1 2
$EndElements
"""
    path = tmp_path / "line.msh"
    path.write_text(content)
    with pytest.raises(UnsupportedCellError):
        load_mesh(path)


def test_zero_subdivisions_rejected():
    with pytest.raises(MeshError):
        generate_structured_tri(0)
    with pytest.raises(MeshError):
        generate_structured_tet(0)


def test_tet_mesh_uniform_diameters():
    m = generate_structured_tet(2)
    assert np.allclose(m.elem_diameters, math.sqrt(3.0) / 2.0)
