"""Acceptance criteria. Each test prints one PASS/FAIL line to the terminal.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from weighted_fem import nonlinearity as nl
from weighted_fem import registry as R
from weighted_fem import weights as W
from weighted_fem.analysis import convergence_study, infsup_constant, ritz_stability_constant
from weighted_fem.fem import (FemSpace, ProblemData, assemble_stiffness,
                              identity_coefficient, weighted_norm, zero_scalar, zero_vector)
from weighted_fem.mesh import ConvexPolygon, structured_square
from weighted_fem.solvers import quasilinear_jacobian, quasilinear_operator, solve_quasilinear

CENTER = (0.5, 0.5)
SQUARE = ConvexPolygon.unit_square()


@pytest.fixture
def report(capsys, request):
    """Collect (ok, detail) checks; print one line and assert at the end."""
    checks = []

    def check(ok, detail):
        checks.append((bool(ok), detail))

    yield check
    ok = all(c for c, _ in checks)
    name = request.node.name.removeprefix("test_")
    failed = "; ".join(d for c, d in checks if not c)
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: "
              + (failed if failed else "; ".join(d for _, d in checks)))
    assert ok, failed


def test_criterion_1_smooth_convergence(report):
    g, _ = R.build("source_data", "sin_sin_source")
    data = ProblemData(zero_vector, g, 2.0, W.constant())
    t0 = time.perf_counter()
    rep = convergence_study(structured_square(4), data, identity_coefficient(),
                            R.build("solution", "sin_sin"), levels=5)
    elapsed = time.perf_counter() - t0
    rg, rv = rep.rates[-1]
    report(0.9 <= rg <= 1.1, f"gradient rate {rg:.4f}")
    report(1.8 <= rv <= 2.2, f"value rate {rv:.4f}")
    report(elapsed < 60, f"runtime {elapsed:.1f}s")


def test_criterion_2_ritz_stability(report):
    c = ritz_stability_constant(FemSpace(structured_square(8)), 2, W.constant())
    report(abs(c - 1) <= 1e-9, f"C_R(1) - 1 = {c - 1:.1e}")
    for gamma in (-0.5, 0.5):
        w = W.power(CENTER, gamma)
        a = ritz_stability_constant(FemSpace(structured_square(8)), 2, w)
        b = ritz_stability_constant(FemSpace(structured_square(16)), 2, w)
        report(abs(b - a) < 0.15 * a, f"gamma {gamma}: C_R {a:.6f} -> {b:.6f}")


def test_criterion_3_discrete_infsup(report):
    spaces = [FemSpace(structured_square(n)) for n in (4, 8, 16)]
    dev = max(abs(infsup_constant(sp, 2, W.constant()) - 1) for sp in spaces)
    report(dev <= 1e-10, f"max |beta(1) - 1| = {dev:.1e}")
    betas = {}
    for gamma in (-0.5, 0.5):
        betas[gamma] = [infsup_constant(sp, 2, W.power(CENTER, gamma)) for sp in spaces]
        b = betas[gamma]
        report(min(b) >= 0.5 * b[0], f"gamma {gamma}: beta " + ", ".join(f"{v:.6f}" for v in b))
    sym = max(abs(x - y) for x, y in zip(betas[-0.5], betas[0.5]))
    report(sym <= 1e-9, f"duality symmetry {sym:.1e}")


def test_criterion_4_quasilinear_solver(report):
    a = nl.uhlenbeck_exp()
    space = FemSpace(structured_square(16))
    f, _ = R.build("flux_data", "solution_flux", exact=R.build("solution", "sin_sin"), model=a)
    data = ProblemData(f, zero_scalar, 2.0, W.constant())
    u, rep = solve_quasilinear(space, a, data, method="newton")
    r = rep.residual_history
    report(rep.converged and rep.iterations <= 25, f"newton iterations {rep.iterations}")
    report(r[-1] < 1e-10 and r[-1] < 1e-10 * r[0], f"residual {r[-1]:.1e} (relative {r[-1] / r[0]:.1e})")
    report(abs(a.mu - 0.553) < 1e-3, f"mu {a.mu:.6f}")
    z, zrep = solve_quasilinear(space, a, data, method="zarantonello")
    dz = weighted_norm(u - z, 2, W.constant())
    report(zrep.converged and dz < 1e-8, f"newton vs zarantonello {dz:.1e} ({zrep.iterations} its)")
    rng = np.random.default_rng(2024)
    v1, _ = solve_quasilinear(space, a, data, initial=rng.standard_normal(space.num_dofs))
    v2, _ = solve_quasilinear(space, a, data, initial=5 * rng.standard_normal(space.num_dofs))
    du = weighted_norm(v1 - v2, 2, W.constant())
    report(du < 1e-8, f"random starts differ by {du:.1e}")


def test_criterion_5_uniform_bound_monitor(report):
    w = W.power(CENTER, 0.5)
    exact = R.build("solution", "log_cutoff")
    model = identity_coefficient()
    f, singular = R.build("flux_data", "solution_flux", exact=exact, model=model)
    data = ProblemData(f, zero_scalar, 2.0, w, tuple(singular))
    rep = convergence_study(structured_square(4), data, model, exact, levels=4)
    ratios = rep.norm_bound_check
    report(all(0.5 <= q <= 2.0 for q in ratios),
           "monitor ratios " + ", ".join(f"{q:.3f}" for q in ratios))
    errs = [lv.err_grad for lv in rep.levels]
    report(all(b < a for a, b in zip(errs, errs[1:])),
           "gradient errors " + ", ".join(f"{e:.4f}" for e in errs))


def test_criterion_6_weight_toolkit(report):
    worst = max(abs(W.ap_characteristic(W.constant(2.5), p, SQUARE).value - 1)
                for p in (1.2, 1.5, 2.0, 3.0, 6.0))
    report(worst <= 1e-9, f"constant weight max |A_p - 1| = {worst:.1e}")
    est = W.ap_characteristic(W.power(CENTER, 1.0), 2, SQUARE)
    report(not est.diverging, f"gamma 1 saturates at {est.value:.4f}")
    est = W.ap_characteristic(W.power(CENTER, -2.0), 2, SQUARE)
    report(est.diverging, "gamma -2 flagged diverging")
    worst = 0.0
    for gamma in (-0.5, 0.5, 1.0):
        for p in (1.5, 2.0, 3.0):
            w = W.power(CENTER, gamma)
            q = p / (p - 1)
            a = W.ap_characteristic(w, p, SQUARE).value
            b = W.ap_characteristic(W.dual_weight(w, p), q, SQUARE).value
            worst = max(worst, abs(b / a ** (1 / (p - 1)) - 1))
    report(worst <= 0.25, f"duality identity max relative gap {worst:.1e}")


def test_criterion_7_structure_checker(report):
    lin = nl.linear(R.build("coefficient", "constant_matrix", {"matrix": [[2.0, 0.5], [0.5, 1.0]]}))
    rep = nl.check_structure(lin)
    report(max(rep.uhlenbeck_profile) == 0.0, "linear law eps(N) = 0")
    rep = nl.check_structure(nl.uhlenbeck_exp())
    prof = dict(zip(rep.radii, rep.uhlenbeck_profile))
    e3 = prof.get(3.0, float("nan"))
    report(e3 < 4e-4, f"uhlenbeck_exp eps(3) = {e3:.2e}")
    p = rep.uhlenbeck_profile
    report(all(b <= a for a, b in zip(p, p[1:])), "eps(N) profile decreasing")

    def unit(x, v):
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    bad = nl.Nonlinearity(unit, lambda x, v: np.broadcast_to(np.eye(2), v.shape + (2,)),
                          lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)), 1.0, 1.0,
                          name="unit")
    rep = nl.check_structure(bad)
    report(any(v.startswith("coercivity") for v in rep.violations), "v/|v| coercivity flagged")


def test_criterion_8_oracle_equivalence(report):
    n = 8
    S = assemble_stiffness(FemSpace(structured_square(n))).toarray()
    T = 2 * np.eye(n - 1) - np.eye(n - 1, k=1) - np.eye(n - 1, k=-1)
    five_point = np.kron(np.eye(n - 1), T) + np.kron(T, np.eye(n - 1))
    report(np.array_equal(S, five_point), "stiffness equals 5-point stencil exactly")
    a = nl.uhlenbeck_exp()
    space = FemSpace(structured_square(8))
    rng = np.random.default_rng(8)
    c = rng.standard_normal(space.num_dofs)
    J = quasilinear_jacobian(space, a, c)
    worst = 0.0
    for _ in range(10):
        d = rng.standard_normal(space.num_dofs)
        fd = (quasilinear_operator(space, a, c + 1e-6 * d)
              - quasilinear_operator(space, a, c - 1e-6 * d)) / 2e-6
        jd = J @ d
        worst = max(worst, np.linalg.norm(fd - jd) / np.linalg.norm(jd))
    report(worst <= 1e-5, f"Jacobian vs finite differences {worst:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
