"""Nonlinear flux laws ``a(x, v)`` and a sampling checker for their structure."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ParameterError
from .fem import LinearCoefficient, identity_coefficient
from .mesh import ConvexPolygon


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Vector field ``a(x, v)`` with Jacobian ``da`` and asymptotic matrix ``A_inf``.

    All callables are vectorized: ``x`` and ``v`` have shape ``(..., 2)``;
    ``a`` returns ``(..., 2)``, ``da`` and ``A_inf`` return ``(..., 2, 2)``.
    ``mu`` is a strong monotonicity constant when one is known.
    """

    a: Callable
    da: Callable
    A_inf: Callable
    alpha: float
    Lambda: float
    mu: float | None = None
    name: str = ""
    params: dict = field(default_factory=dict)

    def __call__(self, x, v):
        return self.a(x, v)

    def asymptotic_coefficient(self):
        return LinearCoefficient(self.A_inf, self.alpha, self.Lambda, f"{self.name}_inf")


def _matvec(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def linear(coefficient):
    """``a(x, v) = A(x) v``."""
    A = coefficient.A
    return Nonlinearity(
        a=lambda x, v: _matvec(A(x), v),
        da=lambda x, v: np.broadcast_to(A(x), np.shape(v)[:-1] + (2, 2)),
        A_inf=A,
        alpha=coefficient.alpha,
        Lambda=coefficient.Lambda,
        mu=coefficient.alpha,
        name="linear",
        params={"coefficient": coefficient.name},
    )


def uhlenbeck_exp():
    """``a(v) = (1 + exp(-|v|**2)) v``; approaches ``v`` for large ``|v|``.

    The radial derivative ``1 + (1 - 2 t**2) exp(-t**2)`` is smallest at
    ``t**2 = 3/2``, which gives ``mu = 1 - 2 exp(-3/2)``.
    """

    def a(x, v):
        t2 = np.sum(v * v, axis=-1)
        return (1.0 + np.exp(-t2))[..., None] * v

    def da(x, v):
        t2 = np.sum(v * v, axis=-1)
        e = np.exp(-t2)[..., None, None]
        return (1.0 + e) * np.eye(2) - 2.0 * e * v[..., :, None] * v[..., None, :]

    eye = identity_coefficient().A
    return Nonlinearity(a, da, eye, alpha=1.0, Lambda=2.0, mu=1.0 - 2.0 * np.exp(-1.5),
                        name="uhlenbeck_exp")


def uhlenbeck_rational(a_tilde=1.0):
    """``a(v) = (a_tilde + 1 / (1 + |v|)) v``; approaches ``a_tilde v``."""
    if not a_tilde > 0:
        raise ParameterError("a_tilde must be positive")
    at = float(a_tilde)

    def a(x, v):
        t = np.linalg.norm(v, axis=-1)
        return (at + 1.0 / (1.0 + t))[..., None] * v

    def da(x, v):
        t = np.linalg.norm(v, axis=-1)
        phi = (at + 1.0 / (1.0 + t))[..., None, None]
        # phi'(t) / t * v v^T, with v v^T / t -> 0 at the origin.
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(t > 0, -1.0 / ((1.0 + t) ** 2 * t), 0.0)[..., None, None]
        return phi * np.eye(2) + c * v[..., :, None] * v[..., None, :]

    A_inf = identity_coefficient(at).A
    return Nonlinearity(a, da, A_inf, alpha=at, Lambda=at + 1.0, mu=at,
                        name="uhlenbeck_rational", params={"a_tilde": at})


@dataclass(frozen=True)
class StructureReport:
    sample_count: int
    coercivity_ratio: float     # min a.v / |v|^2
    growth_ratio: float         # max |a| / |v|
    monotonicity: float         # min (a(v)-a(w)).(v-w) / |v-w|^2
    radii: tuple
    uhlenbeck_profile: tuple    # eps(N) for N in radii
    strong_profile: tuple       # max |da - A_inf| over |v| >= N
    violations: tuple

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "sample_count": self.sample_count,
            "coercivity_ratio": self.coercivity_ratio,
            "growth_ratio": self.growth_ratio,
            "monotonicity": self.monotonicity,
            "radii": list(self.radii),
            "uhlenbeck_profile": [_jsonable(v) for v in self.uhlenbeck_profile],
            "strong_profile": [_jsonable(v) for v in self.strong_profile],
            "violations": list(self.violations),
        }


def _jsonable(v):
    return None if not np.isfinite(v) else float(v)


def check_structure(a, sample_count=4000, radius_schedule=(0.5, 1.0, 2.0, 3.0, 5.0, 10.0),
                    region=None, seed=0xA9, tol=1e-9):
    """Sample ``a`` and report coercivity, growth, monotonicity, and Uhlenbeck profiles.

    Points ``x`` are uniform in ``region`` (unit square by default); vectors
    ``v`` have random directions and magnitudes log-uniform over a range
    that extends one decade beyond ``radius_schedule`` on both sides.
    Sampling can refute the assumptions but never certify them.
    """
    radii = tuple(float(r) for r in radius_schedule)
    if not radii or min(radii) <= 0:
        raise ParameterError("radius_schedule must hold positive radii")
    region = region or ConvexPolygon.unit_square()
    rng = np.random.default_rng(seed)
    lo, hi = region.bounding_box
    x = np.empty((0, 2))
    while len(x) < sample_count:
        cand = lo + rng.random((2 * sample_count, 2)) * (hi - lo)
        x = np.vstack([x, cand[region.contains(cand)]])
    x = x[:sample_count]

    def vectors():
        t = np.exp(rng.uniform(np.log(min(radii) / 10), np.log(max(radii) * 10), sample_count))
        th = rng.uniform(0, 2 * np.pi, sample_count)
        return t[:, None] * np.column_stack([np.cos(th), np.sin(th)])

    v = vectors()
    w = vectors()
    t = np.linalg.norm(v, axis=1)
    av = np.asarray(a.a(x, v))
    coer = float(np.min(np.sum(av * v, axis=1) / t ** 2))
    growth = float(np.max(np.linalg.norm(av, axis=1) / t))
    dvw = v - w
    mono = float(np.min(np.sum((av - a.a(x, w)) * dvw, axis=1) / np.sum(dvw ** 2, axis=1)))

    rel = np.linalg.norm(av - _matvec(a.A_inf(x), v), axis=1) / t
    dev = np.linalg.norm(np.asarray(a.da(x, v)) - a.A_inf(x), ord=2, axis=(1, 2))
    prof, strong = [], []
    for N in radii:
        sel = t >= N
        prof.append(float(rel[sel].max()) if sel.any() else float("nan"))
        strong.append(float(dev[sel].max()) if sel.any() else float("nan"))

    violations = []
    if coer < a.alpha * (1 - tol):
        violations.append(f"coercivity: min a.v/|v|^2 = {coer:.6g} < alpha = {a.alpha:.6g}")
    if growth > a.Lambda * (1 + tol):
        violations.append(f"growth: max |a|/|v| = {growth:.6g} > Lambda = {a.Lambda:.6g}")
    if not mono > 0:
        violations.append(f"monotonicity: min normalized inner product = {mono:.6g}")
    return StructureReport(int(sample_count), coer, growth, mono, radii, tuple(prof),
                           tuple(strong), tuple(violations))
