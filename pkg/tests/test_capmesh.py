"""Structured cap meshes: counts, geometry invariants, conormals, areas."""

import numpy as np
import pytest

from reflector_ot import capmesh, sphere
from reflector_ot.errors import InvalidParameter, NotBoundary


def test_smallest_mesh_counts():
    m = capmesh.build_cap_mesh(np.pi / 4, 2, order=2)
    assert m.n_triangles == 24
    assert m.n_corners == 19
    assert m.euler_characteristic() == 1


@pytest.mark.parametrize("n", [3, 5, 8, 13])
def test_count_formulas(n):
    m = capmesh.build_cap_mesh(np.pi / 4, n, order=2)
    assert m.n_triangles == 6 * n * n
    assert m.n_corners == 3 * n * n + 3 * n + 1
    assert len(m.vertices) == 12 * n * n + 6 * n + 1  # corners + edge midpoints
    assert m.euler_characteristic() == 1
    assert len(m.boundary_edges) == 6 * n


def test_mesh_size_convention():
    assert capmesh.build_cap_mesh(np.pi / 4, 80, order=2).h == pytest.approx(9.8175e-3, rel=1e-4)
    assert capmesh.build_cap_mesh(np.pi / 4, 20, order=2).h == pytest.approx(3.927e-2, rel=1e-4)
    assert capmesh.build_cap_mesh(np.pi / 4, 10).h == 2 * capmesh.build_cap_mesh(np.pi / 4, 20).h


def test_nodes_on_sphere_and_rim():
    m = capmesh.build_cap_mesh(0.6, 7, order=2, center=[0.3, -0.2, -1.0])
    assert np.abs(np.linalg.norm(m.vertices, axis=1) - 1.0).max() < 1e-12
    rim = sphere.geodesic_distance(m.vertices[m.boundary_nodes()], m.center)
    assert np.abs(rim - 0.6).max() < 1e-10


def test_orientation_outward():
    m = capmesh.build_cap_mesh(np.pi / 4, 6, order=1)
    tri = m.vertices[m.triangles]
    cue = np.einsum(
        "ij,ij->i", np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), tri[:, 0]
    )
    assert cue.min() > 0.0


def test_boundary_conormal_example(mesh20):
    b = np.array([np.sin(np.pi / 4), 0.0, -np.cos(np.pi / 4)])
    nodes = mesh20.boundary_nodes()
    node = int(nodes[np.argmin(np.linalg.norm(mesh20.vertices[nodes] - b, axis=1))])
    nu = capmesh.boundary_conormal(mesh20, node)
    assert np.allclose(nu, [np.cos(np.pi / 4), 0.0, np.sin(np.pi / 4)], atol=1e-12)


def test_conormal_orthogonality(mesh20):
    nodes = mesh20.boundary_nodes()
    pts = mesh20.vertices[nodes]
    nu = capmesh.conormal_at(mesh20.center, pts)
    assert np.abs(np.einsum("ij,ij->i", nu, pts)).max() < 1e-12
    # perpendicular to the rim tangent
    tang = np.cross(pts, np.broadcast_to(mesh20.center, pts.shape))
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    assert np.abs(np.einsum("ij,ij->i", nu, tang)).max() < 1e-12


def test_conormal_rejects_interior(mesh20):
    with pytest.raises(NotBoundary):
        capmesh.boundary_conormal(mesh20, 0)


def test_total_area_converges():
    exact = capmesh.cap_area(np.pi / 4)
    st = capmesh.mesh_statistics(capmesh.build_cap_mesh(np.pi / 4, 40, order=2))
    assert exact == pytest.approx(1.84030236902, rel=1e-9)
    assert abs(st["total_area"] - exact) < 1e-3
    assert st["min_area"] > 0.0


def test_second_order_geometry_much_closer():
    exact = capmesh.cap_area(np.pi / 4)
    e1 = abs(capmesh.mesh_statistics(capmesh.build_cap_mesh(np.pi / 4, 20, 1))["total_area"] - exact)
    e2 = abs(capmesh.mesh_statistics(capmesh.build_cap_mesh(np.pi / 4, 20, 2))["total_area"] - exact)
    assert e1 > 10.0 * e2


def test_parameter_validation():
    with pytest.raises(InvalidParameter):
        capmesh.build_cap_mesh(0.0, 10)
    with pytest.raises(InvalidParameter):
        capmesh.build_cap_mesh(np.pi / 2, 10)
    with pytest.raises(InvalidParameter):
        capmesh.build_cap_mesh(np.pi / 4, 1)
    with pytest.raises(InvalidParameter):
        capmesh.build_cap_mesh(np.pi / 4, 10, order=3)
