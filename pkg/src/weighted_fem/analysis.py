"""Stability constants and convergence studies.

Spectral quantities for ``p = 2`` are computed exactly with dense linear
algebra; for other exponents only sampled estimates are available and are
labelled as such.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import splu

from .errors import ParameterError, UnsupportedExponentError, WeightedFemError
from .fem import (FemSpace, LinearCoefficient, assemble_stiffness, element_weight_integrals,
                  error_norms, free_prolongation, weighted_gradient_gram, weighted_mass,
                  weighted_norm)
from .mesh import Mesh, refine_uniform, triangulate
from .quadrature import DEFAULT_POLICY
from .solvers import solve_linear, solve_quasilinear
from .weights import DEFAULT_SEED, dual_weight

log = logging.getLogger(__name__)

DENSE_CAP = 3000


def _dense(M, what):
    if M.shape[0] > DENSE_CAP:
        raise ParameterError(f"{what} has {M.shape[0]} dofs; dense diagnostics are capped at {DENSE_CAP}")
    return M.toarray()


def _gradient_norms(space, w, p, coeff_rows):
    """Weighted gradient norms of many fields at once (rows are coefficient vectors)."""
    Wt = element_weight_integrals(space, w)
    out = []
    for c in np.atleast_2d(coeff_rows):
        g = np.linalg.norm(space.field(c).gradients, axis=1)
        out.append(float(np.sum(g ** p * Wt)) ** (1 / p))
    return np.array(out)


def infsup_constant(space, p, w, sampled=False, samples=200, seed=DEFAULT_SEED):
    """Discrete inf-sup constant of the Dirichlet pairing in weighted norms.

    For ``p = 2`` this is the smallest singular value of
    ``L_w^{-1} S L_w'^{-T}``, where ``S`` is the unweighted stiffness matrix
    and ``L_w L_w^T``, ``L_w' L_w'^T`` are the weighted gradient Gram
    matrices of ``w`` and its dual weight.

    Other exponents raise :class:`UnsupportedExponentError` unless
    ``sampled=True``, in which case the minimum over random fields of
    ``(w^T S w) / (|grad w|_{p,w} |grad w|_{p',w'})`` is returned. That
    value uses the trial field itself as test field and is a heuristic
    estimate, not a certified bound.
    """
    if p == 2:
        S = _dense(assemble_stiffness(space), "inf-sup problem")
        Lw = sla.cholesky(_dense(weighted_gradient_gram(space, w), "weighted Gram"), lower=True)
        Ld = sla.cholesky(_dense(weighted_gradient_gram(space, dual_weight(w, 2.0)), "dual Gram"),
                          lower=True)
        M = sla.solve_triangular(Lw, S, lower=True)
        M = sla.solve_triangular(Ld, M.T, lower=True).T
        return float(sla.svdvals(M).min())
    if not sampled:
        raise UnsupportedExponentError(
            f"exact inf-sup constants need p = 2 (got {p}); pass sampled=True for an estimate")
    q = p / (p - 1)
    S = assemble_stiffness(space)
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((samples, space.num_dofs))
    num = np.einsum("ki,ki->k", C, (S @ C.T).T)
    den = _gradient_norms(space, w, p, C) * _gradient_norms(space, dual_weight(w, p), q, C)
    return float(np.min(num / den))


def _refinement_chain(mesh, levels):
    chain = [mesh]
    for _ in range(levels):
        chain.append(refine_uniform(chain[-1]))
    return chain


def ritz_stability_constant(coarse, p, w, probe_refinements=2, samples=64, seed=DEFAULT_SEED):
    """Weighted operator norm of the Ritz projection onto ``coarse``.

    The projection acts on the space of the coarse mesh refined
    ``probe_refinements`` times. For ``p = 2`` the exact norm between
    weighted gradient norms is the square root of the largest eigenvalue of
    ``F^T (B^T D_f^{-1} B) F`` with ``B = S_f P``, ``F = S_c^{-1} L_c`` and
    ``D_c = L_c L_c^T``. Otherwise the maximum ratio over random probe
    fields is returned, which is a lower bound.
    """
    if probe_refinements < 1:
        raise ParameterError("probe_refinements must be at least 1")
    chain = _refinement_chain(coarse.mesh, probe_refinements)
    fine = FemSpace(chain[-1])
    P = free_prolongation(coarse, fine, chain)
    S_f = assemble_stiffness(fine)
    S_c = (P.T @ S_f @ P).toarray()
    if coarse.num_dofs == 0:
        return 0.0
    if p == 2:
        D_f = weighted_gradient_gram(fine, w)
        D_c = _dense(P.T @ D_f @ P, "coarse weighted Gram")
        B = (S_f @ P).toarray()
        G = B.T @ splu(D_f.tocsc()).solve(B)
        Lc = sla.cholesky(D_c, lower=True)
        F = sla.cho_solve(sla.cho_factor(S_c), Lc)
        H = F.T @ G @ F
        return float(np.sqrt(sla.eigvalsh(0.5 * (H + H.T)).max()))
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((samples, fine.num_dofs))
    R = sla.cho_solve(sla.cho_factor(S_c), (P.T @ (S_f @ W.T))).T
    num = _gradient_norms(coarse, w, p, R)
    den = _gradient_norms(fine, w, p, W)
    return float(np.max(num / den))


def poincare_constant(space, p, w, samples=200, seed=DEFAULT_SEED):
    """Best constant in ``|u|_{p,w} <= C |grad u|_{p,w}`` over the discrete space.

    Exact for ``p = 2`` (generalized eigenproblem of the weighted mass and
    gradient Gram matrices); a sampled lower bound otherwise.
    """
    if p == 2:
        M = _dense(weighted_mass(space, w), "weighted mass")
        D = _dense(weighted_gradient_gram(space, w), "weighted Gram")
        lam = sla.eigh(M, D, eigvals_only=True)
        return float(np.sqrt(lam.max()))
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((samples, space.num_dofs))
    # Include the lowest Dirichlet mode, which dominates for smooth weights.
    ev = sla.eigh(_dense(assemble_stiffness(space), "stiffness"),
                  _dense(weighted_mass(space, w), "mass"), subset_by_index=[0, 0])[1][:, 0]
    C = np.vstack([ev, C])
    best = 0.0
    for c in C:
        u = space.field(c)
        best = max(best, weighted_norm(u, p, w, "value") / weighted_norm(u, p, w, "gradient"))
    return best


@dataclass(frozen=True)
class OscillationReport:
    lhs: float
    holds: bool

    def to_dict(self):
        return {"lhs": self.lhs, "holds": self.holds}


def small_oscillation_check(A, C_delta_est, C_R_est):
    """Evaluate ``2 C_delta C_R (1 - alpha / Lambda) <= 1``.

    ``A`` is a :class:`LinearCoefficient` or an ``(alpha, Lambda)`` pair.
    """
    alpha, Lam = (A.alpha, A.Lambda) if isinstance(A, LinearCoefficient) else A
    if alpha > Lam:
        raise ParameterError(f"alpha = {alpha} exceeds Lambda = {Lam}")
    if not (alpha > 0 and C_delta_est > 0 and C_R_est > 0):
        raise ParameterError("alpha and the constant estimates must be positive")
    lhs = 2.0 * C_delta_est * C_R_est * (1.0 - alpha / Lam)
    return OscillationReport(float(lhs), bool(lhs <= 1.0))


@dataclass
class ConstantsReport:
    C_delta_est: float
    C_R_est: float
    C_P_est: float
    beta_h: list
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "C_delta_est": self.C_delta_est,
            "C_R_est": self.C_R_est,
            "C_P_est": self.C_P_est,
            "beta_h": self.beta_h,
            "provenance": self.provenance,
        }


def estimate_constants(coarse_mesh, w, levels=3, probe_refinements=2):
    """Inf-sup constants on ``levels`` meshes plus Ritz and Poincare constants.

    ``C_delta`` is estimated as the reciprocal inf-sup constant on the finest
    level; ``C_P`` is an estimate as well (discrete, ``p = 2``).
    """
    meshes = _refinement_chain(coarse_mesh, levels - 1)
    beta = [{"h": m.h, "dofs": int(np.sum(~m.boundary_vertex)),
             "beta": infsup_constant(FemSpace(m), 2.0, w)} for m in meshes]
    finest = FemSpace(meshes[-1])
    C_R = ritz_stability_constant(FemSpace(coarse_mesh), 2.0, w, probe_refinements)
    C_P = poincare_constant(finest, 2.0, w)
    return ConstantsReport(1.0 / beta[-1]["beta"], C_R, C_P, beta,
                           {"levels": levels, "probe_refinements": probe_refinements,
                            "weight": w.to_dict(), "diameter": coarse_mesh.polygon.diameter,
                            "p": 2.0})


# -- convergence studies -----------------------------------------------


@dataclass
class LevelResult:
    level: int
    h: float
    dofs: int
    err_grad: float
    err_val: float
    norm_monitor: float
    iterations: int
    rate_grad: float = float("nan")
    rate_val: float = float("nan")


CSV_COLUMNS = ("level", "h", "dofs", "err_grad", "err_val", "rate_grad", "rate_val",
               "norm_monitor", "iterations")

# Errors below this are treated as exact and get no rate.
EXACT_FLOOR = 1e-9


@dataclass
class ConvergenceReport:
    levels: list = field(default_factory=list)

    @property
    def rates(self):
        return [(lv.rate_grad, lv.rate_val) for lv in self.levels[1:]]

    @property
    def norm_bound_check(self):
        """Per-level monitor divided by its coarsest-level value."""
        if not self.levels:
            return []
        base = self.levels[0].norm_monitor
        return [lv.norm_monitor / base if base else float("nan") for lv in self.levels]

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for lv in self.levels:
            row = [lv.level, lv.h, lv.dofs, lv.err_grad, lv.err_val, lv.rate_grad, lv.rate_val,
                   lv.norm_monitor, lv.iterations]
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if not np.isfinite(v):
        return "nan"
    return repr(float(v))


def _rate(prev, cur):
    if not (np.isfinite(prev) and np.isfinite(cur)) or cur < EXACT_FLOOR or prev < EXACT_FLOOR:
        return float("nan")
    return float(np.log2(prev / cur))


def convergence_study(domain, data, model, exact=None, levels=5, coarse_h=None, method="newton",
                      on_level=None, policy=DEFAULT_POLICY, solver_options=None):
    """Solve on a uniform refinement hierarchy and record errors and norm monitors.

    Parameters
    ----------
    domain : ConvexPolygon or Mesh
        A polygon is triangulated with ``coarse_h``.
    model : LinearCoefficient or Nonlinearity
    exact : FieldFunction, optional
        Manufactured solution with ``grad``.
    on_level : callable, optional
        Called with each finished :class:`LevelResult`.
    solver_options : dict, optional
        Extra keyword arguments for :func:`solve_quasilinear`.

    Errors raised by a solver carry the levels finished so far in
    ``partial_report``.
    """
    if levels < 3:
        raise ParameterError("a convergence study needs at least 3 levels")
    if isinstance(domain, Mesh):
        mesh = domain
    else:
        if coarse_h is None:
            raise ParameterError("coarse_h is required when the domain is a polygon")
        mesh = triangulate(domain, coarse_h)
    report = ConvergenceReport()
    for k in range(levels):
        if k:
            mesh = refine_uniform(mesh)
        space = FemSpace(mesh)
        try:
            if isinstance(model, LinearCoefficient):
                u, rep = solve_linear(space, model, data)
            else:
                u, rep = solve_quasilinear(space, model, data, method=method,
                                           **(solver_options or {}))
            nf, ng = data.data_norms(mesh, policy)
            if exact is not None:
                eg, ev = error_norms(u, exact, data.p, data.omega, policy)
            else:
                eg = ev = float("nan")
        except WeightedFemError as exc:
            exc.partial_report = report
            raise
        lv = LevelResult(k, mesh.h, space.num_dofs, eg, ev,
                         rep.final_weighted_norm / (1.0 + nf + ng), rep.iterations)
        if k:
            prev = report.levels[-1]
            lv.rate_grad = _rate(prev.err_grad, eg)
            lv.rate_val = _rate(prev.err_val, ev)
        report.levels.append(lv)
        log.info("level %d: h=%.4g dofs=%d err_grad=%.4g err_val=%.4g monitor=%.4g",
                 k, mesh.h, space.num_dofs, eg, ev, lv.norm_monitor)
        if on_level is not None:
            on_level(lv)
    return report
