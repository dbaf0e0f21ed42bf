"""Conforming triangulations of convex polygons.

Meshes are built by fanning a convex polygon from its centroid and then
applying uniform red refinement, which keeps the family quasiuniform with
shape constants that depend only on the polygon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import LocationError, MeshError, ParameterError

GEOM_TOL = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon with counterclockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("polygon vertices must be an (n, 2) array")
        if len(v) < 3:
            raise MeshError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise MeshError("polygon vertices must be finite")
        d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() <= GEOM_TOL:
            raise MeshError("polygon has repeated vertices")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= GEOM_TOL):
            raise MeshError(
                "polygon is not strictly convex and counterclockwise "
                f"(minimum turn cross product {cross.min():.3g})"
            )
        # A strictly convex chain can still wind more than once.
        turning = np.arctan2(cross, np.einsum("ij,ij->i", e, np.roll(e, -1, axis=0)))
        if abs(turning.sum() - 2 * np.pi) > 1e-8:
            raise MeshError("polygon boundary winds more than once")
        object.__setattr__(self, "vertices", _frozen(v, float))

    @classmethod
    def from_json(cls, text):
        """Parse a JSON array of ``[x, y]`` pairs."""
        return cls(np.array(json.loads(text), dtype=float))

    @classmethod
    def unit_square(cls):
        return cls(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))

    def to_json(self):
        return json.dumps(self.vertices.tolist())

    @property
    def area(self):
        x, y = self.vertices.T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def centroid(self):
        x, y = self.vertices.T
        c = x * np.roll(y, -1) - np.roll(x, -1) * y
        a = 0.5 * c.sum()
        cx = np.sum((x + np.roll(x, -1)) * c) / (6 * a)
        cy = np.sum((y + np.roll(y, -1)) * c) / (6 * a)
        return np.array([cx, cy])

    @property
    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diameter(self):
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None] - v[None, :], axis=-1)))

    def contains(self, points, tol=GEOM_TOL):
        """Vectorized point-in-polygon test with an absolute tolerance."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        rel = pts[:, None, :] - v[None, :, :]
        cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
        cross /= np.linalg.norm(e, axis=1)[None, :]
        return np.all(cross >= -tol, axis=1)

    def translated(self, shift):
        return ConvexPolygon(self.vertices + np.asarray(shift, dtype=float))

    def scaled(self, factor, origin=(0.0, 0.0)):
        o = np.asarray(origin, dtype=float)
        return ConvexPolygon(o + factor * (self.vertices - o))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with boundary vertex flags.

    Attributes
    ----------
    vertices : (N, 2) array
    triangles : (M, 3) int array, counterclockwise
    boundary_vertex : (N,) bool array
    polygon : ConvexPolygon
        The meshed domain.
    quasiuniformity_bound : float
        ``h / h_min`` of the coarsest mesh in the refinement family.
    midpoint_parents : (K, 2) int array or None
        For meshes produced by :func:`refine_uniform`, the endpoints (in the
        parent mesh) of the edge whose midpoint is vertex ``n_parent + k``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex: np.ndarray
    polygon: ConvexPolygon
    quasiuniformity_bound: float = field(default=np.inf)
    midpoint_parents: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64))
        object.__setattr__(self, "boundary_vertex", _frozen(self.boundary_vertex, bool))
        if self.midpoint_parents is not None:
            object.__setattr__(self, "midpoint_parents", _frozen(self.midpoint_parents, np.int64))
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (M, 3) index array")
        if len(self.boundary_vertex) != len(self.vertices):
            raise MeshError("one boundary flag per vertex is required")
        if np.any(self.signed_areas <= 0):
            raise MeshError("mesh contains triangles with non-positive signed area")
        if not np.isfinite(self.quasiuniformity_bound):
            object.__setattr__(self, "quasiuniformity_bound", self.h / self.h_min)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @cached_property
    def corners(self):
        """(M, 3, 2) array of triangle vertex coordinates."""
        return self.vertices[self.triangles]

    @cached_property
    def signed_areas(self):
        c = self.vertices[self.triangles]
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self):
        return self.signed_areas

    @cached_property
    def diameters(self):
        c = self.corners
        lens = np.linalg.norm(c[:, [1, 2, 0]] - c, axis=-1)
        return lens.max(axis=1)

    @property
    def h(self):
        return float(self.diameters.max())

    @property
    def h_min(self):
        return float(self.diameters.min())

    @property
    def quasiuniformity(self):
        return self.h / self.h_min

    @cached_property
    def _edge_data(self):
        local = self.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        edges, inverse, counts = np.unique(
            np.sort(local, axis=1), axis=0, return_inverse=True, return_counts=True
        )
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self):
        """(E, 2) sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self):
        """(M, 3) edge ids of edges (v0 v1), (v1 v2), (v2 v0)."""
        return self._edge_data[1]

    @property
    def boundary_edges(self):
        edges, _, counts = self._edge_data
        return edges[counts == 1]

    @property
    def num_edges(self):
        return len(self.edges)

    def barycentric(self, points, triangles=None):
        """Barycentric coordinates of every point in every triangle.

        Returns an array of shape ``(P, T, 3)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.triangles if triangles is None else self.triangles[triangles]
        c = self.vertices[tri]
        a, b, d = c[:, 0], c[:, 1], c[:, 2]
        det = (b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (d[:, 0] - a[:, 0])
        rx = pts[:, None, 0] - a[None, :, 0]
        ry = pts[:, None, 1] - a[None, :, 1]
        l1 = (rx * (d[:, 1] - a[:, 1]) - ry * (d[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * ry - (b[:, 1] - a[:, 1]) * rx) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def fan_mesh(polygon):
    """Triangles ``(v_i, v_{i+1}, centroid)`` with the centroid as last vertex."""
    n = len(polygon.vertices)
    verts = np.vstack([polygon.vertices, polygon.centroid])
    tris = np.array([[i, (i + 1) % n, n] for i in range(n)])
    boundary = np.r_[np.ones(n, dtype=bool), False]
    return Mesh(verts, tris, boundary, polygon)


def refine_uniform(mesh):
    """Red refinement: split every triangle into four via edge midpoints."""
    n = mesh.num_vertices
    edges = mesh.edges
    te = mesh.triangle_edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    bedge = np.zeros(len(edges), dtype=bool)
    bedge[mesh._edge_data[2] == 1] = True
    boundary = np.r_[mesh.boundary_vertex, bedge]

    t = mesh.triangles
    m01, m12, m20 = n + te[:, 0], n + te[:, 1], n + te[:, 2]
    children = np.stack(
        [
            np.stack([t[:, 0], m01, m20], axis=1),
            np.stack([m01, t[:, 1], m12], axis=1),
            np.stack([m20, m12, t[:, 2]], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(
        verts,
        children,
        boundary,
        mesh.polygon,
        quasiuniformity_bound=mesh.quasiuniformity_bound,
        midpoint_parents=edges,
    )


def triangulate(polygon, target_h):
    """Fan triangulation from the centroid, refined until ``h <= target_h``."""
    if not target_h > 0:
        raise ParameterError(f"target_h must be positive, got {target_h}")
    mesh = fan_mesh(polygon)
    while mesh.h > target_h:
        mesh = refine_uniform(mesh)
    return mesh


def structured_square(n):
    """Unit square split into ``n x n`` cells, each cut along its (+1, +1) diagonal.

    All triangles are right-angled with legs ``1/n``; with ``n`` even the
    square's center is a mesh vertex.
    """
    if n < 1:
        raise ParameterError("n must be at least 1")
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    tris = np.column_stack([v00, v10, v11, v00, v11, v01]).reshape(-1, 3)
    on_bd = (
        np.isclose(verts[:, 0], 0) | np.isclose(verts[:, 0], 1)
        | np.isclose(verts[:, 1], 0) | np.isclose(verts[:, 1], 1)
    )
    return Mesh(verts, tris, on_bd, ConvexPolygon.unit_square())


def locate_many(mesh, points, tol=GEOM_TOL, chunk=2048):
    """Vectorized :func:`locate`; returns triangle indices and barycentrics."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out_t = np.empty(len(pts), dtype=np.int64)
    out_b = np.empty((len(pts), 3))
    step = max(1, chunk * 64 // max(mesh.num_triangles, 1))
    for s in range(0, len(pts), step):
        lam = mesh.barycentric(pts[s:s + step])
        inside = np.all(lam >= -tol, axis=-1)
        found = inside.any(axis=1)
        if not found.all():
            bad = pts[s:s + step][~found][0]
            raise LocationError(f"point {bad.tolist()} lies outside the mesh")
        first = inside.argmax(axis=1)
        out_t[s:s + step] = first
        out_b[s:s + step] = lam[np.arange(len(first)), first]
    return out_t, out_b


def locate(mesh, x, tol=GEOM_TOL):
    """Triangle containing ``x`` (lowest index on ties) and its barycentrics."""
    t, b = locate_many(mesh, np.asarray(x, dtype=float)[None, :], tol=tol)
    return int(t[0]), b[0]
