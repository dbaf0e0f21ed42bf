import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from weighted_fem import nonlinearity as nl
from weighted_fem import registry as R
from weighted_fem import weights as W
from weighted_fem.errors import NonconvergenceError, ParameterError, SolverError
from weighted_fem.fem import (FemSpace, ProblemData, assemble_stiffness, identity_coefficient,
                              weighted_norm, zero_scalar, zero_vector)
from weighted_fem.mesh import ConvexPolygon, structured_square, triangulate
from weighted_fem.solvers import (pcg, quasilinear_jacobian, quasilinear_operator, solve,
                                  solve_linear, solve_quasilinear, solve_spd)

SIN_SIN = R.build("solution", "sin_sin")
PROTO = nl.uhlenbeck_exp()


def _proto_data():
    f, _ = R.build("flux_data", "solution_flux", exact=SIN_SIN, model=PROTO)
    return ProblemData(f, zero_scalar, 2.0, W.constant())


def test_pcg_matches_direct_solve():
    rng = np.random.default_rng(0)
    S = assemble_stiffness(FemSpace(structured_square(12)))
    b = rng.standard_normal(S.shape[0])
    x, its, hist = pcg(S, b, rtol=1e-12)
    assert np.linalg.norm(S @ x - b) <= 1e-12 * np.linalg.norm(b) * 1.0001
    assert np.allclose(x, np.linalg.solve(S.toarray(), b), atol=1e-9)
    assert hist[-1] < 1e-12 and its < S.shape[0] * 10


def test_pcg_rejects_indefinite_and_stalls():
    A = sp.csr_matrix(np.diag([1.0, -1.0]))
    with pytest.raises(SolverError):
        pcg(A, np.ones(2))
    S = assemble_stiffness(FemSpace(structured_square(8)))
    with pytest.raises(SolverError):
        pcg(S, np.ones(S.shape[0]), maxiter=2)


def test_solve_spd_dense_and_iterative_agree(monkeypatch):
    from weighted_fem import solvers
    S = assemble_stiffness(FemSpace(structured_square(10)))
    b = np.arange(S.shape[0], dtype=float)
    x1, _, _ = solve_spd(S, b)
    monkeypatch.setattr(solvers, "DENSE_LIMIT", 1)
    x2, _, _ = solve_spd(S, b)
    assert np.allclose(x1, x2, atol=1e-10)


def test_solve_linear_sin_sin_nodal_error_decreases():
    g, _ = R.build("source_data", "sin_sin_source")
    data = ProblemData(zero_vector, g, 2.0, W.constant())
    errs = []
    for n in (4, 8, 16):
        space = FemSpace(structured_square(n))
        u, rep = solve_linear(space, identity_coefficient(), data)
        assert rep.converged
        errs.append(np.max(np.abs(u.nodal - SIN_SIN(space.mesh.vertices))))
    assert errs[0] > errs[1] > errs[2]


def test_solve_linear_reproduces_discrete_data_and_zero():
    space = FemSpace(triangulate(ConvexPolygon.unit_square(), 0.25))
    w = space.field(np.random.default_rng(1).standard_normal(space.num_dofs))
    u, _ = solve_linear(space, identity_coefficient(), ProblemData(w.grad, zero_scalar, 2.0,
                                                                   W.constant()))
    assert np.allclose(u.coeffs, w.coeffs, atol=1e-10)
    z, _ = solve_linear(space, identity_coefficient(), ProblemData(zero_vector, zero_scalar, 2.0,
                                                                   W.constant()))
    assert np.all(z.coeffs == 0)


def test_mu_of_prototype_matches_one_dimensional_oracle():
    res = minimize_scalar(lambda t: 1 + (1 - 2 * t * t) * np.exp(-t * t), bounds=(0, 5),
                          method="bounded", options={"xatol": 1e-12})
    assert PROTO.mu == pytest.approx(res.fun, abs=1e-9)
    assert PROTO.mu == pytest.approx(0.553, abs=1e-3)


def test_jacobian_matches_finite_differences():
    space = FemSpace(structured_square(6))
    rng = np.random.default_rng(2)
    c = rng.standard_normal(space.num_dofs)
    J = quasilinear_jacobian(space, PROTO, c).toarray()
    for _ in range(10):
        d = rng.standard_normal(space.num_dofs)
        t = 1e-6
        fd = (quasilinear_operator(space, PROTO, c + t * d)
              - quasilinear_operator(space, PROTO, c - t * d)) / (2 * t)
        assert np.linalg.norm(fd - J @ d) <= 1e-5 * np.linalg.norm(J @ d)


def test_rational_nonlinearity_jacobian():
    a = nl.uhlenbeck_rational(0.5)
    space = FemSpace(structured_square(5))
    c = np.random.default_rng(3).standard_normal(space.num_dofs)
    d = np.random.default_rng(4).standard_normal(space.num_dofs)
    J = quasilinear_jacobian(space, a, c)
    fd = (quasilinear_operator(space, a, c + 1e-6 * d) - quasilinear_operator(space, a, c - 1e-6 * d)) / 2e-6
    assert np.linalg.norm(fd - J @ d) <= 1e-5 * np.linalg.norm(J @ d)


def test_newton_prototype_and_uniqueness():
    space = FemSpace(structured_square(16))
    data = _proto_data()
    u, rep = solve_quasilinear(space, PROTO, data, method="newton")
    assert rep.converged and rep.iterations <= 25
    assert rep.residual_history[-1] < 1e-10 * rep.residual_history[0]
    assert all(b < a for a, b in zip(rep.residual_history, rep.residual_history[1:]))
    rng = np.random.default_rng(11)
    for _ in range(2):
        v, _ = solve_quasilinear(space, PROTO, data, initial=rng.standard_normal(space.num_dofs))
        assert weighted_norm(u - v, 2, W.constant()) < 1e-8
    # Consistency: fresh residual of the returned field.
    from weighted_fem.fem import assemble_load
    r = quasilinear_operator(space, PROTO, u.coeffs) - assemble_load(space, data)
    S = assemble_stiffness(space)
    dual = np.sqrt(r @ np.linalg.solve(S.toarray(), r))
    assert dual < 10 * 1e-10 * rep.residual_history[0]


def test_zarantonello_agrees_and_is_monotone():
    space = FemSpace(structured_square(8))
    data = _proto_data()
    u, _ = solve_quasilinear(space, PROTO, data, method="newton")
    z, rep = solve_quasilinear(space, PROTO, data, method="zarantonello")
    h = rep.residual_history
    assert rep.converged and all(b <= a for a, b in zip(h, h[1:]))
    assert weighted_norm(u - z, 2, W.constant()) < 1e-8


def test_continuation_start_converges():
    space = FemSpace(structured_square(8))
    _, rep = solve_quasilinear(space, PROTO, _proto_data(), continuation=True)
    assert rep.converged


def test_linear_nonlinearity_matches_linear_solve():
    space = FemSpace(structured_square(8))
    A = R.build("coefficient", "oscillating", {"alpha": 1.0, "Lambda": 2.0})
    g, _ = R.build("source_data", "sin_sin_source")
    data = ProblemData(zero_vector, g, 2.0, W.constant())
    u, _ = solve_linear(space, A, data)
    v, rep = solve(space, nl.linear(A), data)
    assert rep.iterations <= 2
    assert np.allclose(u.coeffs, v.coeffs, atol=1e-10)


def test_solver_errors():
    space = FemSpace(structured_square(8))
    with pytest.raises(ParameterError):
        solve_quasilinear(space, PROTO, _proto_data(), method="bisection")
    no_mu = nl.Nonlinearity(PROTO.a, PROTO.da, PROTO.A_inf, 1.0, 2.0, None, "no_mu")
    with pytest.raises(ParameterError):
        solve_quasilinear(space, no_mu, _proto_data(), method="zarantonello")
    with pytest.raises(NonconvergenceError) as info:
        solve_quasilinear(space, PROTO, _proto_data(), method="zarantonello", max_iter=3)
    assert info.value.report.iterations == 3


def test_structure_checker():
    lin = nl.linear(R.build("coefficient", "constant_matrix", {"matrix": [[2.0, 0.5], [0.5, 1.0]]}))
    rep = nl.check_structure(lin)
    assert rep.ok and max(rep.uhlenbeck_profile) == 0.0 and max(rep.strong_profile) == 0.0
    assert rep.coercivity_ratio >= lin.alpha - 1e-12 and rep.growth_ratio <= lin.Lambda + 1e-12

    rep = nl.check_structure(PROTO, radius_schedule=(0.5, 1, 2, 3, 5))
    prof = dict(zip(rep.radii, rep.uhlenbeck_profile))
    assert rep.ok and prof[3.0] < 4e-4
    assert all(b <= a for a, b in zip(rep.uhlenbeck_profile, rep.uhlenbeck_profile[1:]))
    assert rep.sample_count == 4000

    def unit(x, v):
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    bad = nl.Nonlinearity(unit, lambda x, v: np.broadcast_to(np.eye(2), v.shape + (2,)),
                          lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)), 1.0, 1.0,
                          name="unit")
    rep = nl.check_structure(bad)
    assert not rep.ok and any(v.startswith("coercivity") for v in rep.violations)
