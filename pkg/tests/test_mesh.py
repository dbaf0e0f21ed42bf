import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weighted_fem.errors import LocationError, MeshError, ParameterError
from weighted_fem.mesh import (ConvexPolygon, fan_mesh, locate, locate_many, refine_uniform,
                               structured_square, triangulate)

TRIANGLE = ConvexPolygon(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
HEXAGON = ConvexPolygon(np.array([[np.cos(t), np.sin(t)] for t in np.arange(6) * np.pi / 3]))


def test_polygon_rejects_bad_input():
    with pytest.raises(MeshError):
        ConvexPolygon(np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(MeshError):  # clockwise
        ConvexPolygon(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(MeshError):  # collinear triple
        ConvexPolygon(np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(MeshError):  # repeated vertex
        ConvexPolygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(MeshError):  # non-convex
        ConvexPolygon(np.array([[0, 0], [2, 0], [1, 0.5], [2, 2], [0, 2]], dtype=float))


def test_polygon_json_roundtrip():
    p = ConvexPolygon.from_json(HEXAGON.to_json())
    assert np.array_equal(p.vertices, HEXAGON.vertices)


def test_fan_of_square():
    m = triangulate(ConvexPolygon.unit_square(), 2.0)
    assert m.num_triangles == 4 and m.num_vertices == 5
    assert np.allclose(m.vertices[-1], [0.5, 0.5])
    assert not m.boundary_vertex[-1] and m.boundary_vertex[:4].all()


def test_one_refinement_of_square():
    m = triangulate(ConvexPolygon.unit_square(), 0.8)
    assert m.num_triangles == 16 and m.num_vertices == 13


def test_fan_of_triangle():
    m = triangulate(TRIANGLE, 2.0)
    assert m.num_triangles == 3
    assert np.allclose(m.vertices[-1], [1 / 3, 1 / 3])


def test_refinement_counts_and_h():
    m = fan_mesh(ConvexPolygon.unit_square())
    r = refine_uniform(m)
    assert r.num_vertices == m.num_vertices + m.num_edges
    assert r.h == pytest.approx(m.h / 2, rel=1e-15)
    assert refine_uniform(r).h == pytest.approx(m.h / 4, rel=1e-15)


def test_triangulate_rejects_nonpositive_h():
    with pytest.raises(ParameterError):
        triangulate(TRIANGLE, 0.0)


@pytest.mark.parametrize("poly", [ConvexPolygon.unit_square(), TRIANGLE, HEXAGON])
def test_mesh_invariants(poly):
    m = triangulate(poly, 0.2)
    assert np.all(m.signed_areas > 0)
    assert m.areas.sum() == pytest.approx(poly.area, rel=1e-12)
    assert m.h <= 0.2
    # Every interior edge is shared by exactly two triangles, boundary edges by one.
    e = np.sort(m.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts) <= {1, 2}
    # Boundary flags match the polygon boundary.
    on_bd = ~poly.contains(m.vertices, tol=-1e-9)
    assert np.array_equal(on_bd, m.boundary_vertex)
    # Polygon corners are mesh vertices.
    for v in poly.vertices:
        assert np.min(np.linalg.norm(m.vertices - v, axis=1)) < 1e-14


def test_quasiuniformity_does_not_grow():
    m = fan_mesh(HEXAGON)
    q = [m.quasiuniformity]
    for _ in range(3):
        m = refine_uniform(m)
        q.append(m.quasiuniformity)
        assert m.quasiuniformity <= m.quasiuniformity_bound + 1e-12
    assert all(b <= a + 1e-12 for a, b in zip(q, q[1:]))


def test_locate_examples():
    m = fan_mesh(ConvexPolygon.unit_square())
    c = m.corners[0].mean(axis=0)
    t, lam = locate(m, c)
    assert t == 0 and np.allclose(lam, 1 / 3)
    t, lam = locate(m, m.vertices[2])
    assert np.isclose(lam.max(), 1.0)
    # (0.25, 0.25) is on the edge shared by the bottom (0) and left (3) triangles.
    t, _ = locate(m, np.array([0.25, 0.25]))
    assert t == 0
    with pytest.raises(LocationError):
        locate(m, np.array([1.5, 0.5]))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_locate_reproduces_point(x, y):
    m = triangulate(ConvexPolygon.unit_square(), 0.3)
    p = np.array([x, y])
    t, lam = locate(m, p)
    assert np.all(lam >= -1e-12) and np.all(lam <= 1 + 1e-12)
    assert abs(lam.sum() - 1) < 1e-12
    assert np.allclose(lam @ m.corners[t], p, atol=1e-12)


def test_locate_many_matches_locate():
    m = triangulate(HEXAGON, 0.4)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.5, 0.5, (50, 2))
    ts, lams = locate_many(m, pts)
    for p, t, lam in zip(pts, ts, lams):
        t1, lam1 = locate(m, p)
        assert t == t1 and np.allclose(lam, lam1)


def test_structured_square():
    m = structured_square(2)
    assert m.num_vertices == 9 and m.num_triangles == 8
    assert np.sum(~m.boundary_vertex) == 1
    assert m.areas.sum() == pytest.approx(1.0)
    assert m.h == pytest.approx(np.sqrt(2) / 2)
