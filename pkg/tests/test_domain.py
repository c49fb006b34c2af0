import math

import numpy as np
import pytest

from elastokernel.domain import (DomainError, Mesh, PolygonalDomain, check_corkscrew,
                                 disk_polygon_area, interior_density, l_shape, refine,
                                 triangulate, unit_square)


def test_unit_square_edges_and_labels():
    dom = unit_square(("D", "N", "N", "N"))
    assert dom.n_edges == 4
    assert dom.area == pytest.approx(1.0)
    assert dom.diameter == pytest.approx(math.sqrt(2))
    a, b, lab = dom.edges()[0]
    assert lab == "D" and a[1] == 0.0 and b[1] == 0.0


def test_invalid_label_rejected():
    with pytest.raises(DomainError):
        unit_square(("D", "X", "N", "N"))


def test_self_intersecting_polygon_rejected():
    with pytest.raises(DomainError):
        PolygonalDomain(np.array([[0, 0], [1, 1], [1, 0], [0, 1.0]]))


@pytest.mark.parametrize("n", [4, 8, 16])
def test_structured_mesh_counts(n):
    mesh = triangulate(unit_square(), math.sqrt(2) / n)
    assert mesh.n_nodes == (n + 1) ** 2
    assert mesh.n_triangles == 2 * n * n
    assert mesh.total_area == pytest.approx(1.0)
    assert mesh.h_max == pytest.approx(math.sqrt(2) / n)
    assert np.all(mesh.signed_areas() > 0)


def test_delaunay_l_shape_conforms():
    dom = l_shape("D")
    mesh = triangulate(dom, 0.25)
    assert mesh.total_area == pytest.approx(dom.area, rel=1e-12)
    assert mesh.h_max <= 0.25 * 1.25 + 1e-12
    assert np.all(mesh.signed_areas() > 0)
    # every boundary edge midpoint lies on the polygon boundary
    mid = mesh.nodes[mesh.boundary_edges].mean(axis=1)
    assert np.abs(dom.distance_to_boundary(mid)).max() < 1e-12


def test_boundary_labels_follow_edges():
    mesh = triangulate(unit_square(("D", "N", "N", "N")), math.sqrt(2) / 4)
    labels = np.asarray(mesh.edge_labels)
    mid = mesh.nodes[mesh.boundary_edges].mean(axis=1)
    assert np.all(labels[np.abs(mid[:, 1]) < 1e-12] == "D")
    assert np.all(labels[np.abs(mid[:, 1]) > 1e-12] == "N")
    d = mesh.dirichlet_nodes
    assert len(d) == 5 and np.all(mesh.nodes[d, 1] == 0.0)


def test_refine_halves_h_and_keeps_labels():
    mesh = triangulate(unit_square(("D", "N", "D", "N")), math.sqrt(2) / 4)
    fine = refine(mesh)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.h_max == pytest.approx(mesh.h_max / 2)
    assert np.sum(np.asarray(fine.edge_labels) == "D") == 2 * np.sum(
        np.asarray(mesh.edge_labels) == "D")


def test_mesh_text_round_trip():
    mesh = triangulate(l_shape("N"), 0.4)
    back = Mesh.from_text(mesh.to_text())
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.nodes, mesh.nodes, rtol=0, atol=0)
    assert back.edge_labels == mesh.edge_labels


def test_interpolation_reproduces_affine_fields():
    mesh = triangulate(l_shape(), 0.3)
    f = lambda x: np.c_[2 * x[:, 0] - x[:, 1] + 0.5, x[:, 1]]
    pts = np.array([[0.2, 0.3], [-0.7, 0.45], [0.9, -0.1]])
    pts = pts[l_shape().contains(pts)]
    got = mesh.interpolate(f(mesh.nodes), pts)
    assert np.allclose(got, f(pts), atol=1e-13)


def test_locator_outside_point():
    mesh = triangulate(unit_square(), 0.5)
    tri, _ = mesh.locator().locate(np.array([[2.0, 2.0]]))
    assert tri[0] == -1
    with pytest.raises(DomainError):
        mesh.interpolate(np.zeros(mesh.n_nodes), [[2.0, 2.0]])


def test_disk_polygon_area_against_closed_forms():
    dom = unit_square()
    assert disk_polygon_area(dom, [0.5, 0.5], 0.3) == pytest.approx(math.pi * 0.09, rel=1e-12)
    assert disk_polygon_area(dom, [0.0, 0.0], 0.5) == pytest.approx(math.pi * 0.25 / 4, rel=1e-12)
    assert disk_polygon_area(dom, [0.5, 0.0], 0.2) == pytest.approx(math.pi * 0.04 / 2, rel=1e-12)


def test_interior_density_of_square_is_quarter_disk():
    # the worst boundary probe of a square is a corner: |B(x,r) cap Q| = pi r^2 / 4
    assert interior_density(unit_square()) == pytest.approx(math.pi / 4, rel=1e-12)


def test_corkscrew_mixed_square():
    flags = check_corkscrew(unit_square(("D", "N", "N", "N")), r0=0.5, M=4.0, probe_count=16)
    assert flags.corkscrew_D
    assert flags.has_lipschitz_D_portion
    flags = check_corkscrew(unit_square(("N",) * 4), r0=0.5, M=4.0, probe_count=16)
    assert flags.corkscrew_D and not flags.has_lipschitz_D_portion
    with pytest.raises(DomainError):
        check_corkscrew(unit_square(), r0=0.5, M=4.0, probe_count=0)
