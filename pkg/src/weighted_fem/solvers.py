"""Linear solves and the monotone quasilinear discrete problem."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from .errors import NonconvergenceError, ParameterError, SolverError
from .fem import LinearCoefficient, assemble_load, assemble_stiffness, weighted_norm
from .quadrature import element_integrals

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
ARMIJO_SIGMA = 1e-4
MIN_DAMPING = 2.0 ** -30


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    final_weighted_norm: float = float("nan")
    method: str = ""


def pcg(A, b, rtol=1e-12, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations, history)`` where ``history`` holds relative
    residual norms. Raises :class:`SolverError` after ``maxiter`` steps.
    """
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a non-positive diagonal entry")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, [0.0]
    z = dinv * r
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bnorm]
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite")
        step = rz / pAp
        x += step * p
        r -= step * Ap
        hist.append(np.linalg.norm(r) / bnorm)
        if hist[-1] < rtol:
            return x, k, hist
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach relative residual {rtol} in {maxiter} iterations")


def solve_spd(A, b, rtol=1e-12):
    """Dense Cholesky below :data:`DENSE_LIMIT` unknowns, PCG above."""
    n = len(b)
    if n == 0:
        return np.zeros(0), 0, [0.0]
    if n < DENSE_LIMIT:
        try:
            c = sla.cho_factor(A.toarray() if sp.issparse(A) else A)
        except np.linalg.LinAlgError as exc:
            raise SolverError("stiffness matrix is not positive definite") from exc
        x = sla.cho_solve(c, b)
        bn = np.linalg.norm(b)
        res = np.linalg.norm(A @ x - b) / bn if bn else 0.0
        return x, 1, [1.0 if bn else 0.0, res]
    return pcg(A, b, rtol)


def solve_linear(space, A, data, rtol=1e-12):
    """Solve ``int A grad(u_h) . grad(v_h) = int f . grad(v_h) + g v_h``."""
    t0 = time.perf_counter()
    S = assemble_stiffness(space, A)
    b = assemble_load(space, data)
    c, its, hist = solve_spd(S, b, rtol)
    u = space.field(c)
    rep = SolveReport(its, list(hist), True, time.perf_counter() - t0,
                      weighted_norm(u, data.p, data.omega), "linear")
    return u, rep


# -- quasilinear --------------------------------------------------------


def quasilinear_operator(space, a, coeffs):
    """Vector of ``int a(x, grad u_h) . grad(phi_i)``."""
    u = space.field(coeffs)
    gh = u.gradients
    G = space.basis_gradients
    flux = element_integrals(space.mesh.corners, lambda x, lam, e: a.a(x, gh[e]))
    return space.scatter_vector(np.einsum("md,mid->mi", flux, G))


def quasilinear_jacobian(space, a, coeffs):
    """Sparse Jacobian of :func:`quasilinear_operator` with respect to the coefficients."""
    gh = space.field(coeffs).gradients
    G = space.basis_gradients
    D = element_integrals(space.mesh.corners, lambda x, lam, e: a.da(x, gh[e]))
    local = np.einsum("mid,mde,mje->mij", G, D, G)
    return space.scatter_matrix(local)


class _DualNorm:
    """``sqrt(r^T S^{-1} r)`` for the stiffness ``S`` of the asymptotic coefficient."""

    def __init__(self, S):
        self.lu = splu(sp.csc_matrix(S)) if S.shape[0] else None

    def solve(self, r):
        return self.lu.solve(r) if self.lu is not None else r

    def __call__(self, r):
        if self.lu is None:
            return 0.0
        return float(np.sqrt(max(r @ self.solve(r), 0.0)))


def solve_quasilinear(space, a, data, method="newton", rtol=1e-10, max_iter=None,
                      initial=None, continuation=False):
    """Solve ``int a(x, grad u_h) . grad(v_h) = int f . grad(v_h) + g v_h``.

    Parameters
    ----------
    method : {"newton", "zarantonello"}
        Damped Newton with a residual-decrease test, or the fixed point
        iteration ``c <- c - tau S^{-1} R(c)`` with ``tau = mu / Lambda**2``.
    rtol : float
        Stop once the dual residual norm falls below ``rtol`` times its
        initial value.
    initial : array, optional
        Starting coefficients (zero by default).
    continuation : bool
        Start from the solution of the linear problem with ``A_inf``.
    """
    if method not in ("newton", "zarantonello"):
        raise ParameterError(f"unknown method {method!r}")
    if method == "zarantonello" and a.mu is None:
        raise ParameterError("Zarantonello iteration needs a strong monotonicity constant mu")
    t0 = time.perf_counter()
    load = assemble_load(space, data)
    S = assemble_stiffness(space, a.asymptotic_coefficient())
    dual = _DualNorm(S)
    if initial is not None:
        c = np.array(initial, dtype=float)
    elif continuation:
        c, _, _ = solve_spd(S, load)
    else:
        c = np.zeros(space.num_dofs)

    def residual(cc):
        return quasilinear_operator(space, a, cc) - load

    R = residual(c)
    r = dual(R)
    rep = SolveReport(0, [r], False, 0.0, float("nan"), method)
    target = rtol * r

    def finish(cc):
        rep.wall_time = time.perf_counter() - t0
        u = space.field(cc)
        rep.final_weighted_norm = weighted_norm(u, data.p, data.omega)
        return u, rep

    if r == 0.0:
        rep.converged = True
        return finish(c)

    if method == "newton":
        max_iter = 50 if max_iter is None else max_iter
        for it in range(1, max_iter + 1):
            J = quasilinear_jacobian(space, a, c)
            step = spsolve(sp.csc_matrix(J), -R)
            lam = 1.0
            while True:
                c_try = c + lam * step
                R_try = residual(c_try)
                r_try = dual(R_try)
                if r_try <= (1.0 - ARMIJO_SIGMA * lam) * r:
                    break
                lam *= 0.5
                if lam < MIN_DAMPING:
                    rep.iterations = it
                    rep.wall_time = time.perf_counter() - t0
                    raise NonconvergenceError(
                        f"damping fell below {MIN_DAMPING:g} at Newton iteration {it}", rep)
            c, R, r = c_try, R_try, r_try
            rep.iterations = it
            rep.residual_history.append(r)
            log.debug("newton %d: residual %.3e, damping %g", it, r, lam)
            if r <= target:
                rep.converged = True
                return finish(c)
    else:
        max_iter = 20000 if max_iter is None else max_iter
        tau = a.mu / a.Lambda ** 2
        for it in range(1, max_iter + 1):
            c = c - tau * dual.solve(R)
            R = residual(c)
            r = dual(R)
            rep.iterations = it
            rep.residual_history.append(r)
            if r <= target:
                rep.converged = True
                return finish(c)
    rep.wall_time = time.perf_counter() - t0
    raise NonconvergenceError(f"{method} did not converge in {max_iter} iterations", rep)


def solve(space, model, data, **kwargs):
    """Dispatch on a :class:`LinearCoefficient` or :class:`Nonlinearity` model."""
    if isinstance(model, LinearCoefficient):
        return solve_linear(space, model, data)
    return solve_quasilinear(space, model, data, **kwargs)

