import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weighted_fem import weights as W
from weighted_fem.errors import DegenerateWeightError, ParameterError
from weighted_fem.mesh import ConvexPolygon

SQUARE = ConvexPolygon.unit_square()
CENTER = (0.5, 0.5)


def test_constant_and_power_evaluation():
    x = np.array([[0.5, 0.5], [1.0, 0.5], [0.5, 0.0]])
    assert np.all(W.constant(3.0)(x) == 3.0)
    assert np.allclose(W.power(CENTER, 2.0)(x), [0.0, 0.25, 0.25])
    with pytest.raises(ParameterError):
        W.constant(0.0)
    with pytest.raises(ParameterError):
        W.WeightSpec("nope")


def test_singular_points():
    assert W.power(CENTER, -1).singular_points == [CENTER]
    assert W.constant().singular_points == []
    lat = W.combine(W.power((0, 0), 1), W.power(CENTER, -1), "min")
    assert lat.singular_points == [(0.0, 0.0), CENTER]


@pytest.mark.parametrize("w, p, want", [
    (W.constant(1.0), 2, ("constant", 1.0)),
    (W.power((0, 0), 1.0), 2, ("power", -1.0)),
    (W.power((0, 0), 0.5), 1.5, ("power", -1.0)),
])
def test_dual_weight_examples(w, p, want):
    d = W.dual_weight(w, p)
    assert d.family == want[0]
    key = "c" if want[0] == "constant" else "gamma"
    assert d.params[key] == pytest.approx(want[1])


def test_dual_weight_rejects_p_at_most_one():
    with pytest.raises(ParameterError):
        W.dual_weight(W.constant(), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.9, 1.9), st.floats(1.1, 5.0))
def test_double_dual_is_identity(gamma, p):
    w = W.power(CENTER, gamma)
    q = p / (p - 1)
    back = W.dual_weight(W.dual_weight(w, p), q)
    x = np.random.default_rng(0).random((20, 2))
    assert np.allclose(back(x), w(x), rtol=1e-12)


def test_dual_of_lattice_swaps_min_and_max():
    a, b = W.power(CENTER, 1.0), W.constant(1.0)
    d = W.dual_weight(W.combine(a, b, "min"), 2.0)
    assert d.family == "lattice_max"
    x = np.random.default_rng(1).random((30, 2))
    assert np.allclose(d(x), 1 / np.minimum(a(x), b(x)))


def test_combine_examples():
    w = W.power((0, 0), 1.0)
    assert np.array_equal(W.combine(w, w, "min")(np.ones((3, 2))), w(np.ones((3, 2))))
    m = W.combine(W.constant(2), W.constant(3), "min")
    assert m.family == "constant" and m.params["c"] == 2
    lat = W.combine(w, W.constant(1.0), "min")
    assert lat(np.array([[2.0, 0.0]]))[0] == pytest.approx(1.0)
    assert lat(np.array([[0.5, 0.0]]))[0] == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        W.combine(w, w, "avg")


@pytest.mark.parametrize("w", [
    W.constant(2.0),
    W.power(CENTER, -0.5),
    W.combine(W.power(CENTER, 1.0), W.constant(0.5), "max"),
    W.maximal_factor_weight(np.eye(4) + 0.5, 0.5, 2.0),
])
def test_json_roundtrip(w):
    back = W.WeightSpec.from_json(w.to_json())
    assert json.loads(back.to_json()) == json.loads(w.to_json())
    x = np.random.default_rng(2).random((10, 2))
    assert np.allclose(back(x), w(x))


def test_json_rejects_unknown_parameters():
    with pytest.raises(ParameterError):
        W.WeightSpec.from_json('{"family": "power", "center": [0, 0], "gamma": 1, "beta": 2}')
    with pytest.raises(ParameterError):
        W.WeightSpec.from_json('{"family": "power", "center": [0, 0]}')


def test_maximal_factor_examples():
    one = W.maximal_factor_weight(np.ones((16, 16)), 0.5)
    assert np.allclose(one(np.random.default_rng(0).random((20, 2))), 1.0)
    left = np.zeros((32, 32))
    left[:, :16] = 1.0
    w = W.maximal_factor_weight(left, 0.5)
    x = np.random.default_rng(1).random((200, 2))
    vals = w(x)
    assert np.allclose(vals[x[:, 0] < 0.5], 1.0)
    assert vals.min() > 0 and vals.max() <= 1.0 + 1e-12
    with pytest.raises(DegenerateWeightError):
        W.maximal_factor_weight(np.zeros((4, 4)), 0.5)
    with pytest.raises(ParameterError):
        W.maximal_factor_weight(np.ones((4, 4)), 1.5)


def test_maximal_factor_is_not_diverging_near_a1():
    left = np.zeros((32, 32))
    left[:, :16] = 1.0
    est = W.ap_characteristic(W.maximal_factor_weight(left, 0.5), 1.01, SQUARE, num_balls=300)
    assert not est.diverging and np.isfinite(est.value)


def test_discrete_maximal_function_dominates_samples():
    rng = np.random.default_rng(4)
    s = rng.random((24, 24))
    M = W.discrete_maximal_function(s, (0, 0, 1, 1))
    assert np.all(M >= s - 1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
def test_ap_constant_is_one(p):
    est = W.ap_characteristic(W.constant(3.0), p, SQUARE, num_balls=200)
    assert est.value == pytest.approx(1.0, abs=1e-9)
    assert not est.diverging


def test_ap_power_membership_range():
    assert not W.ap_characteristic(W.power(CENTER, 1.0), 2, SQUARE).diverging
    assert W.ap_characteristic(W.power(CENTER, -2.0), 2, SQUARE).diverging
    # gamma = 1 sits on the boundary of A_1.5 (needs gamma < 2 (p - 1) = 1).
    assert W.ap_characteristic(W.power(CENTER, 1.0), 1.5, SQUARE).diverging


def test_ap_estimate_is_jensen_bounded_and_seeded():
    w = W.power(CENTER, 0.5)
    a = W.ap_characteristic(w, 2, SQUARE, num_balls=300, seed=7)
    b = W.ap_characteristic(w, 2, SQUARE, num_balls=300, seed=7)
    assert a == b
    assert a.value >= 1 - 1e-9


def test_ap_threads_do_not_change_result():
    w = W.power(CENTER, 0.5)
    a = W.ap_characteristic(w, 2, SQUARE, num_balls=400)
    b = W.ap_characteristic(w, 2, SQUARE, num_balls=400, threads=3)
    assert a.value == b.value


def test_ap_monotone_embedding():
    w = W.power(CENTER, 0.5)
    a2 = W.ap_characteristic(w, 2, SQUARE).value
    a3 = W.ap_characteristic(w, 3, SQUARE).value
    assert a3 <= 1.1 * a2


def test_ap_translation_and_dilation_invariance():
    base = W.ap_characteristic(W.power(CENTER, 0.5), 2, SQUARE).value
    moved = SQUARE.translated((2.0, -1.0))
    t = W.ap_characteristic(W.power((2.5, -0.5), 0.5), 2, moved).value
    big = SQUARE.scaled(3.0)
    d = W.ap_characteristic(W.power((1.5, 1.5), 0.5), 2, big).value
    assert t == pytest.approx(base, rel=0.1)
    assert d == pytest.approx(base, rel=0.1)


def test_ap_rejects_bad_arguments():
    with pytest.raises(ParameterError):
        W.ap_characteristic(W.constant(), 1.0, SQUARE)
    with pytest.raises(ParameterError):
        W.ap_characteristic(W.constant(), 2.0, SQUARE, num_balls=0)


def test_reverse_holder_constant():
    est = W.reverse_holder_probe(W.constant(2.0), 2, SQUARE, [0.1, 0.5, 1.0], num_balls=200)
    assert est.eps == 1.0 and est.constant == pytest.approx(1.0)


def test_reverse_holder_power_weights():
    grid = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5]
    pos = W.reverse_holder_probe(W.power(CENTER, 1.0), 2, SQUARE, grid)
    assert pos.eps is not None and pos.eps < 1.0
    neg = W.reverse_holder_probe(W.power(CENTER, -1.5), 2, SQUARE, grid)
    # omega^(1+eps) stays integrable only for eps < 1/3.
    assert neg.eps is not None and neg.eps < 1 / 3
    with pytest.raises(ParameterError):
        W.reverse_holder_probe(W.constant(), 2, SQUARE, [])
