"""Quadrature on triangles, including integrands with point singularities.

Integrands are vectorized callables: ``f(x)`` receives points of shape
``(..., 2)`` and returns values of shape ``(...)`` or ``(..., k)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, IntegrationError, ParameterError

# Barycentric tolerance for "the singular point touches this triangle".
TOUCH_TOL = 1e-10
# Radial probe for non-integrable singularities: annulus contributions
# mean|f| * rho**2 on circles of radius diam * 2**-k, k in _PROBE_LEVELS.
# Non-decay by at least _STALL_RATIO over the last _STALL_DEPTHS halvings
# means the integral diverges.
_PROBE_LEVELS = range(6, 31)
_PROBE_ANGLES = 64
_STALL_RATIO = 0.99
_STALL_DEPTHS = 5
# Children within this many child-sizes (in barycentric terms) of a singular
# point are subdivided further, so the rule only sees well-separated pieces.
NEAR_FIELD = 1.0


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (Q, 3) barycentric
    weights: np.ndarray  # (Q,), sum to one
    degree: int


def _dunavant6():
    a1, w1 = 0.445948490915964886318, 0.223381589678011065396
    a2, w2 = 0.091576213509770743460, 0.109951743655321601271
    pts = []
    for a in (a1, a2):
        b = 1.0 - 2.0 * a
        pts += [[a, a, b], [a, b, a], [b, a, a]]
    w = np.array([w1] * 3 + [w2] * 3)
    return QuadratureRule(np.array(pts), w, 4)


DEGREE4 = _dunavant6()

# Barycentric corners of the red children of the reference triangle.
_RED_CHILDREN = np.array(
    [
        [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
        [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
        [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
        [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
    ]
)


@dataclass(frozen=True)
class SingularIntegrationPolicy:
    max_depth: int = 20
    rel_tol: float = 1e-8

    def __post_init__(self):
        if int(self.max_depth) < 1:
            raise ParameterError("max_depth must be at least 1")
        if not self.rel_tol > 0:
            raise ParameterError("rel_tol must be positive")

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else dict(text)
        unknown = set(d) - {"max_depth", "rel_tol"}
        if unknown:
            raise ParameterError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps({"max_depth": self.max_depth, "rel_tol": self.rel_tol})


DEFAULT_POLICY = SingularIntegrationPolicy()


def triangle_area(corners):
    c = np.asarray(corners, dtype=float)
    e1 = c[..., 1, :] - c[..., 0, :]
    e2 = c[..., 2, :] - c[..., 0, :]
    return 0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def _check_finite(vals, where):
    if not np.all(np.isfinite(vals)):
        raise IntegrationError(f"non-finite integrand value on {where}")


def integrate(triangle, f, rule=DEGREE4):
    """Integrate ``f`` over one triangle with the degree-4 rule."""
    c = np.asarray(triangle, dtype=float)
    x = rule.points @ c
    vals = np.asarray(f(x), dtype=float)
    _check_finite(vals, f"triangle {c.tolist()}")
    return triangle_area(c) * np.tensordot(rule.weights, vals, axes=(0, 0))


def touches(triangle, points, tol=TOUCH_TOL):
    """Whether any of ``points`` lies in the slightly inflated triangle."""
    if len(points) == 0:
        return False
    c = np.asarray(triangle, dtype=float)
    T = np.column_stack([c[1] - c[0], c[2] - c[0]])
    rel = np.linalg.solve(T, (np.asarray(points, dtype=float) - c[0]).T).T
    lam = np.column_stack([1 - rel.sum(axis=1), rel])
    return bool(np.any(np.all(lam >= -tol, axis=1)))


def _touches_bary(child_bary, points_bary, tol=TOUCH_TOL):
    """``child_bary`` (3, 3) corners in parent barycentrics; points (S, 3)."""
    # Barycentrics of the points relative to the child, computed in the
    # parent's barycentric plane (drop the third coordinate).
    c = child_bary[:, :2]
    T = np.column_stack([c[1] - c[0], c[2] - c[0]])
    rel = np.linalg.solve(T, (points_bary[:, :2] - c[0]).T).T
    lam = np.column_stack([1 - rel.sum(axis=1), rel])
    return bool(np.any(np.all(lam >= -tol, axis=1)))


def _radial_probe(corners, f, points_bary, tol=TOUCH_TOL):
    """Raise :class:`DivergenceError` if ``f`` is not integrable near a singular point."""
    corners = np.asarray(corners, dtype=float)
    diam = max(np.linalg.norm(corners[i] - corners[j]) for i, j in ((0, 1), (1, 2), (0, 2)))
    th = 2 * np.pi * (np.arange(_PROBE_ANGLES) + 0.5) / _PROBE_ANGLES
    circle = np.column_stack([np.cos(th), np.sin(th)])
    T = np.column_stack([corners[1] - corners[0], corners[2] - corners[0]])
    Tinv = np.linalg.inv(T)
    for pb in points_bary:
        x0 = pb @ corners
        contrib = []
        for k in _PROBE_LEVELS:
            rho = diam * 2.0 ** -k
            x = x0 + rho * circle
            rel = (x - corners[0]) @ Tinv.T
            lam = np.column_stack([1 - rel.sum(axis=1), rel])
            keep = np.all(lam >= -tol, axis=1)
            if not keep.any():
                contrib = []
                break
            with np.errstate(all="ignore"):
                vals = np.asarray(f(x[keep], lam[keep]), dtype=float)
            vals = np.abs(vals.reshape(len(vals), -1)).max(axis=1)
            if not np.all(np.isfinite(vals)):
                raise DivergenceError(f"integrand is not finite near {x0.tolist()}")
            contrib.append(vals.mean() * rho ** 2)
        c = np.array(contrib)
        if len(c) <= _STALL_DEPTHS or c[-_STALL_DEPTHS - 1] == 0:
            continue
        ratios = c[-_STALL_DEPTHS:] / c[-_STALL_DEPTHS - 1:-1]
        if np.all(ratios >= _STALL_RATIO):
            raise DivergenceError(
                f"integrand is not integrable near {x0.tolist()}: annulus contributions "
                f"change by a factor of at least {ratios.min():.4f} per halving of the radius"
            )


def _subdivide(corners, f, points_bary, policy, rule=DEGREE4):
    """Subdivision toward singular points, in the parent's barycentric frame.

    ``f(x, lam)`` gets physical points and parent barycentrics.
    """
    corners = np.asarray(corners, dtype=float)
    _radial_probe(corners, f, points_bary)
    area = triangle_area(corners)

    def rule_sum(subs):
        # subs: (K, 3, 3) barycentric corners; fraction of parent area each.
        subs = np.asarray(subs)
        lam = np.einsum("qi,kij->kqj", rule.points, subs)
        x = lam @ corners
        vals = np.asarray(f(x, lam), dtype=float)
        _check_finite(vals, f"subtriangle of {corners.tolist()}")
        # The reference triangle has area 1/2 in the (lam0, lam1) plane.
        frac = 2.0 * triangle_area(subs[..., :2])
        return area * np.tensordot(frac[:, None] * rule.weights[None, :], vals, axes=([0, 1], [0, 1]))

    active = np.eye(3)[None]
    total = rule_sum(active)
    regular = 0.0
    for depth in range(1, int(policy.max_depth) + 1):
        children = np.einsum("cij,kjl->kcil", _RED_CHILDREN, active).reshape(-1, 3, 3)
        hit = np.array([_touches_bary(ch, points_bary, NEAR_FIELD) for ch in children])
        if np.any(~hit):
            regular = regular + rule_sum(children[~hit])
        active = children[hit]
        new_total = regular + (rule_sum(active) if len(active) else 0.0)
        inc = float(np.max(np.abs(new_total - total)))
        total = new_total
        if inc <= policy.rel_tol * float(np.max(np.abs(total))) or not len(active):
            return total
    return total


def _to_bary(corners, points):
    c = np.asarray(corners, dtype=float)
    T = np.column_stack([c[1] - c[0], c[2] - c[0]])
    rel = np.linalg.solve(T, (np.asarray(points, dtype=float) - c[0]).T).T
    return np.column_stack([1 - rel.sum(axis=1), rel])


def integrate_singular(triangle, f, points, policy=DEFAULT_POLICY):
    """Integrate ``f`` whose only non-smoothness sits at the given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)) if len(points) else np.empty((0, 2))
    if not touches(triangle, pts):
        return integrate(triangle, f)
    return _subdivide(triangle, lambda x, lam: f(x), _to_bary(triangle, pts), policy)


def integrate_weighted(triangle, f, w, policy=DEFAULT_POLICY):
    """Integrate ``f * w`` over a triangle, subdividing toward the weight's singularity."""
    pts = w.singular_points
    return integrate_singular(triangle, lambda x: _times(f(x), w(x)), pts, policy)


def _times(vals, wvals):
    vals = np.asarray(vals, dtype=float)
    wvals = np.asarray(wvals, dtype=float)
    if vals.ndim > wvals.ndim:
        wvals = wvals.reshape(wvals.shape + (1,) * (vals.ndim - wvals.ndim))
    return vals * wvals


def element_integrals(corners, f, weight=None, singular_points=(), policy=DEFAULT_POLICY,
                      rule=DEGREE4):
    """Integrate ``f(x, lam, elems) * weight(x)`` over every element.

    Parameters
    ----------
    corners : (M, 3, 2) array
    f : callable
        Receives physical points ``x`` (..., 2), barycentric coordinates
        ``lam`` (..., 3) relative to the element, and element ids ``elems``
        broadcast to ``x.shape[:-1]``.
    weight : WeightSpec, optional
    singular_points : sequence of points
        Extra singular points of ``f`` beyond those of ``weight``.

    Returns
    -------
    (M, ...) array of element integrals.
    """
    corners = np.asarray(corners, dtype=float)
    M = len(corners)
    pts = [np.asarray(p, dtype=float) for p in singular_points]
    if weight is not None:
        pts += [np.asarray(p, dtype=float) for p in weight.singular_points]
    pts = np.array(pts).reshape(-1, 2)

    def g(x, lam, elems):
        vals = f(x, lam, elems)
        if weight is None:
            return np.asarray(vals, dtype=float)
        return _times(vals, weight(x))

    lam = np.broadcast_to(rule.points, (M,) + rule.points.shape)
    x = lam @ corners
    elems = np.broadcast_to(np.arange(M)[:, None], (M, len(rule.weights)))
    singular = np.zeros(M, dtype=bool)
    if len(pts):
        singular = _elements_touching(corners, pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(g(x, lam, elems), dtype=float)
    if np.any(~singular):
        _check_finite(vals[~singular], "regular elements")
    area = triangle_area(corners)
    out = np.tensordot(rule.weights, np.moveaxis(vals, 1, 0), axes=(0, 0))
    out = out * area.reshape((M,) + (1,) * (out.ndim - 1))
    for e in np.flatnonzero(singular):
        local = lambda xx, ll, e=e: g(xx, ll, np.full(xx.shape[:-1], e))
        out[e] = _subdivide(corners[e], local, _to_bary(corners[e], pts), policy, rule)
    return out


def _elements_touching(corners, pts, tol=TOUCH_TOL):
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    rx = pts[:, None, 0] - a[None, :, 0]
    ry = pts[:, None, 1] - a[None, :, 1]
    l1 = (rx * (c[:, 1] - a[:, 1]) - ry * (c[:, 0] - a[:, 0])) / det
    l2 = ((b[:, 0] - a[:, 0]) * ry - (b[:, 1] - a[:, 1]) * rx) / det
    l0 = 1 - l1 - l2
    inside = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
    return inside.any(axis=0)
