"""P1 finite elements on triangular meshes with homogeneous Dirichlet conditions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ParameterError, SolverError
from .mesh import locate_many
from .quadrature import DEFAULT_POLICY, element_integrals


@dataclass(frozen=True)
class FieldFunction:
    """A scalar function with optional gradient, both vectorized over ``(..., 2)``."""

    value: Callable
    grad: Callable | None = None
    singular_points: tuple = ()
    name: str = ""

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True, eq=False)
class LinearCoefficient:
    """Symmetric matrix field ``A(x)`` with spectral bounds ``alpha <= A <= Lambda``."""

    A: Callable
    alpha: float
    Lambda: float
    name: str = ""

    def __post_init__(self):
        if not 0 < self.alpha <= self.Lambda:
            raise ParameterError(f"need 0 < alpha <= Lambda, got {self.alpha}, {self.Lambda}")

    def __call__(self, x):
        return self.A(x)

    def check(self, region, samples=256, seed=0):
        """Verify symmetry and the spectral bounds at random points of ``region``."""
        rng = np.random.default_rng(seed)
        lo, hi = region.bounding_box
        x = lo + rng.random((samples, 2)) * (hi - lo)
        x = x[region.contains(x)]
        A = np.asarray(self.A(x))
        if np.max(np.abs(A - np.swapaxes(A, -1, -2))) > 1e-12:
            return False
        ev = np.linalg.eigvalsh(A)
        return bool(ev.min() >= self.alpha - 1e-9 and ev.max() <= self.Lambda + 1e-9)


def constant_coefficient(matrix, name="constant"):
    M = np.asarray(matrix, dtype=float)
    if M.shape != (2, 2) or not np.allclose(M, M.T, atol=1e-12):
        raise ParameterError("coefficient matrix must be symmetric 2x2")
    ev = np.linalg.eigvalsh(M)
    return LinearCoefficient(lambda x: np.broadcast_to(M, np.shape(x)[:-1] + (2, 2)),
                             float(ev[0]), float(ev[1]), name)


def identity_coefficient(scale=1.0):
    return constant_coefficient(scale * np.eye(2), name="identity" if scale == 1.0 else "scaled_identity")


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Right-hand side ``-div f + g`` together with the exponent and weight."""

    f: Callable
    g: Callable
    p: float
    omega: object
    singular_points: tuple = ()

    def __post_init__(self):
        if not self.p > 1:
            raise ParameterError(f"p must exceed 1, got {self.p}")

    def data_norms(self, mesh, policy=DEFAULT_POLICY):
        """``(||f||, ||g||)`` in ``L^p(omega)``; raises on non-integrable data."""
        nf = weighted_norm(FieldFunction(lambda x: np.linalg.norm(self.f(x), axis=-1),
                                         singular_points=self.singular_points),
                           self.p, self.omega, "value", mesh=mesh, policy=policy)
        ng = weighted_norm(FieldFunction(self.g, singular_points=self.singular_points),
                           self.p, self.omega, "value", mesh=mesh, policy=policy)
        return nf, ng


def zero_vector(x):
    return np.zeros(np.shape(x))


def zero_scalar(x):
    return np.zeros(np.shape(x)[:-1])


class FemSpace:
    """Continuous piecewise linears vanishing on the boundary."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.free_dofs = np.flatnonzero(~mesh.boundary_vertex)
        self.dof_of_vertex = np.full(mesh.num_vertices, -1, dtype=np.int64)
        self.dof_of_vertex[self.free_dofs] = np.arange(len(self.free_dofs))

    @property
    def num_dofs(self):
        return len(self.free_dofs)

    def __len__(self):
        return self.num_dofs

    @cached_property
    def basis_gradients(self):
        """(M, 3, 2) gradients of the barycentric functions on each triangle."""
        c = self.mesh.corners
        J = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=2)  # columns = edges
        Jinv = np.linalg.inv(J)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.einsum("ik,mkd->mid", ref, Jinv)

    def scatter_matrix(self, local, full=False):
        """Sum (M, 3, 3) element matrices into a sparse matrix."""
        t = self.mesh.triangles
        n = self.mesh.num_vertices
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        K = sp.coo_matrix((np.asarray(local).ravel(), (rows, cols)), shape=(n, n)).tocsr()
        if full:
            return K
        return K[self.free_dofs][:, self.free_dofs].tocsr()

    def scatter_vector(self, local, full=False):
        n = self.mesh.num_vertices
        v = np.bincount(self.mesh.triangles.ravel(), weights=np.asarray(local).ravel(), minlength=n)
        return v if full else v[self.free_dofs]

    def field(self, coeffs):
        return DiscreteField(self, np.asarray(coeffs, dtype=float))

    def zero(self):
        return self.field(np.zeros(self.num_dofs))

    def interpolate(self, fn):
        """Nodal interpolant of ``fn`` (boundary values dropped)."""
        return self.field(np.asarray(fn(self.mesh.vertices[self.free_dofs]), dtype=float))


@dataclass(frozen=True, eq=False)
class DiscreteField:
    space: FemSpace
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (self.space.num_dofs,):
            raise ParameterError(
                f"expected {self.space.num_dofs} coefficients, got {self.coeffs.shape}")

    @property
    def nodal(self):
        """Values at all mesh vertices, zero on the boundary."""
        v = np.zeros(self.space.mesh.num_vertices)
        v[self.space.free_dofs] = self.coeffs
        return v

    @property
    def gradients(self):
        """(M, 2) piecewise-constant gradient."""
        loc = self.nodal[self.space.mesh.triangles]
        return np.einsum("mi,mid->md", loc, self.space.basis_gradients)

    def values_at(self, lam, elems):
        """Values at barycentric coordinates ``lam`` of elements ``elems``."""
        loc = self.nodal[self.space.mesh.triangles][elems]
        return np.sum(loc * lam, axis=-1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        t, lam = locate_many(self.space.mesh, x.reshape(-1, 2))
        return self.values_at(lam, t).reshape(x.shape[:-1])

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        t, _ = locate_many(self.space.mesh, x.reshape(-1, 2))
        return self.gradients[t].reshape(x.shape)

    def as_function(self):
        """Evaluate this field on points of any mesh (e.g. a refinement)."""
        return FieldFunction(self.__call__, self.grad, (), "discrete")

    def __add__(self, other):
        return self.space.field(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self.space.field(self.coeffs - other.coeffs)

    def __mul__(self, t):
        return self.space.field(t * self.coeffs)

    __rmul__ = __mul__


# -- assembly -----------------------------------------------------------


def element_coefficient_integrals(space, A, policy=DEFAULT_POLICY):
    """(M, 2, 2) integrals of the coefficient over each element."""
    return element_integrals(space.mesh.corners, lambda x, lam, e: A(x), policy=policy)


def assemble_stiffness(space, A=None, full=False, policy=DEFAULT_POLICY):
    """Matrix of ``int A grad(phi_j) . grad(phi_i)`` over free dofs.

    With ``full=True`` the matrix covers every vertex hat, boundary included.
    """
    G = space.basis_gradients
    if A is None:
        KA = np.broadcast_to(space.mesh.areas[:, None, None] * np.eye(2), (len(G), 2, 2))
    else:
        KA = element_coefficient_integrals(space, A, policy)
    local = np.einsum("mid,mde,mje->mij", G, KA, G)
    return space.scatter_matrix(local, full)


def assemble_load(space, data, policy=DEFAULT_POLICY):
    """Vector of ``int f . grad(phi_i) + g phi_i`` over free dofs."""
    G = space.basis_gradients
    pts = data.singular_points

    def integrand(x, lam, e):
        fx = np.asarray(data.f(x), dtype=float)
        gx = np.asarray(data.g(x), dtype=float)
        flux = np.einsum("...d,...id->...i", fx, G[e])
        return flux + gx[..., None] * lam

    local = element_integrals(space.mesh.corners, integrand, singular_points=pts, policy=policy)
    return space.scatter_vector(local)


def element_weight_integrals(space, w, policy=DEFAULT_POLICY):
    """(M,) integrals of the weight over each element."""
    return element_integrals(space.mesh.corners, lambda x, lam, e: np.ones(x.shape[:-1]),
                             weight=w, policy=policy)


def weighted_gradient_gram(space, w, policy=DEFAULT_POLICY):
    """Matrix of ``int w grad(phi_i) . grad(phi_j)`` over free dofs."""
    G = space.basis_gradients
    Wt = element_weight_integrals(space, w, policy)
    local = Wt[:, None, None] * np.einsum("mid,mjd->mij", G, G)
    return space.scatter_matrix(local)


def weighted_mass(space, w, policy=DEFAULT_POLICY):
    """Matrix of ``int w phi_i phi_j`` over free dofs."""
    local = element_integrals(space.mesh.corners,
                              lambda x, lam, e: lam[..., :, None] * lam[..., None, :],
                              weight=w, policy=policy)
    return space.scatter_matrix(local)


# -- norms --------------------------------------------------------------


def weighted_norm(target, p, w, kind="gradient", mesh=None, policy=DEFAULT_POLICY):
    """``(int |v|**p w)**(1/p)`` with ``v`` the value or gradient of ``target``.

    ``target`` is a :class:`DiscreteField` or a function; functions need
    ``mesh`` for the integration and a ``grad`` attribute for
    ``kind="gradient"``.
    """
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    if kind not in ("value", "gradient"):
        raise ParameterError(f"kind must be 'value' or 'gradient', got {kind!r}")
    if isinstance(target, DiscreteField):
        space = target.space
        if kind == "gradient":
            Wt = element_weight_integrals(space, w, policy)
            g = np.linalg.norm(target.gradients, axis=1)
            return float(np.sum(g ** p * Wt)) ** (1.0 / p)
        loc = target.nodal[space.mesh.triangles]
        vals = element_integrals(space.mesh.corners,
                                 lambda x, lam, e: np.abs(np.sum(loc[e] * lam, axis=-1)) ** p,
                                 weight=w, policy=policy)
        return float(np.sum(vals)) ** (1.0 / p)
    if mesh is None:
        raise ParameterError("a mesh is required to integrate a function")
    pts = getattr(target, "singular_points", ())
    if kind == "gradient":
        gradf = getattr(target, "grad", None)
        if gradf is None:
            raise ParameterError("target has no gradient")
        fn = lambda x, lam, e: np.linalg.norm(gradf(x), axis=-1) ** p
    else:
        fn = lambda x, lam, e: np.abs(target(x)) ** p
    vals = element_integrals(mesh.corners, fn, weight=w, singular_points=pts, policy=policy)
    return float(np.sum(vals)) ** (1.0 / p)


def error_norms(field, exact, p, w, policy=DEFAULT_POLICY):
    """Weighted ``(||grad(u - u_h)||, ||u - u_h||)`` for a function ``exact``."""
    space = field.space
    gh = field.gradients
    loc = field.nodal[space.mesh.triangles]
    pts = getattr(exact, "singular_points", ())

    def grad_err(x, lam, e):
        return np.linalg.norm(exact.grad(x) - gh[e], axis=-1) ** p

    def val_err(x, lam, e):
        return np.abs(exact(x) - np.sum(loc[e] * lam, axis=-1)) ** p

    corners = space.mesh.corners
    eg = element_integrals(corners, grad_err, weight=w, singular_points=pts, policy=policy)
    ev = element_integrals(corners, val_err, weight=w, singular_points=pts, policy=policy)
    return float(np.sum(eg)) ** (1 / p), float(np.sum(ev)) ** (1 / p)


# -- Ritz projection ----------------------------------------------------


def ritz_rhs(space, w, policy=DEFAULT_POLICY):
    """Vector of ``int grad(w) . grad(phi_i)``."""
    G = space.basis_gradients
    pts = getattr(w, "singular_points", ())
    gint = element_integrals(space.mesh.corners, lambda x, lam, e: w.grad(x),
                             singular_points=pts, policy=policy)
    return space.scatter_vector(np.einsum("md,mid->mi", gint, G))


def ritz_project(space, w, policy=DEFAULT_POLICY):
    """Galerkin projection of ``w`` in the unweighted Dirichlet inner product."""
    S = assemble_stiffness(space).tocsc()
    rhs = ritz_rhs(space, w, policy)
    if space.num_dofs == 0:
        return space.zero()
    c = spsolve(S, rhs)
    if not np.all(np.isfinite(c)):
        raise SolverError("Ritz system is singular")
    return space.field(np.atleast_1d(c))


def prolongation_chain(meshes):
    """Product of single-level prolongations along ``meshes[0] -> ... -> meshes[-1]``."""
    P = sp.identity(meshes[0].num_vertices, format="csr")
    for parent, fm in zip(meshes[:-1], meshes[1:]):
        if fm.midpoint_parents is None or fm.num_vertices - len(fm.midpoint_parents) != parent.num_vertices:
            raise ParameterError("meshes are not successive uniform refinements")
        n_parent = parent.num_vertices
        k = len(fm.midpoint_parents)
        rows = np.r_[np.arange(n_parent), np.repeat(np.arange(n_parent, n_parent + k), 2)]
        cols = np.r_[np.arange(n_parent), fm.midpoint_parents.ravel()]
        vals = np.r_[np.ones(n_parent), np.full(2 * k, 0.5)]
        P = sp.csr_matrix((vals, (rows, cols)), shape=(fm.num_vertices, n_parent)) @ P
    return P.tocsr()


def free_prolongation(coarse_space, fine_space, meshes):
    """Prolongation restricted to free dofs of both spaces."""
    P = prolongation_chain(meshes)
    return P[fine_space.free_dofs][:, coarse_space.free_dofs].tocsr()
