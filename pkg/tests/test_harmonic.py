import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signorini_lab.harmonic import (
    HarmonicPolynomial,
    Membership,
    Polynomial,
    classify_membership,
    even_harmonic_basis,
    fit_exterior_expansion,
    harmonic_extension,
    make_normalized_quadratic,
)


def test_normalized_quadratic_sublevel_set():
    q = make_normalized_quadratic([0.5, 0.5], 1.0)
    assert q.a == (0.5, 0.5) and q.c == 1.0
    # trace is |x|^2 / 4 - 1
    x = np.array([[1.99, 0.0], [1.4, 1.4], [1.42, 1.42], [0.0, 2.01]])
    X = np.concatenate([x, np.zeros((4, 1))], axis=1)
    inside = q(X) <= 0
    np.testing.assert_array_equal(inside, [True, True, False, False])
    assert q.sublevel_radius() == pytest.approx(2.0)


def test_normalized_quadratic_sum_rejected():
    with pytest.raises(ValueError, match="sum != 1"):
        make_normalized_quadratic([1.0, 1.0], 1.0)


def test_normalized_quadratic_nonpositive_rejected():
    with pytest.raises(ValueError):
        make_normalized_quadratic([1.5, -0.5], 1.0)


def test_normalized_quadratic_tiny_drift_rescaled():
    q = make_normalized_quadratic([0.5, 0.5 + 5e-13], 1.0)
    assert sum(q.a) == pytest.approx(1.0, abs=1e-15)


def test_zero_level_is_origin():
    q = make_normalized_quadratic([1 / 3, 2 / 3], 0.0)
    assert classify_membership(q.polynomial()) is Membership.BOUNDARY
    assert q(np.zeros(3)) == 0.0
    assert q(np.array([1e-3, 0, 0])) > 0


@pytest.mark.parametrize(
    "c, expected",
    [(1.0, Membership.MEMBER), (-1.0, Membership.EMPTY), (0.0, Membership.BOUNDARY)],
)
def test_classify_quadratics(c, expected):
    assert classify_membership(make_normalized_quadratic([0.5, 0.5], c).polynomial()) is expected


def test_indefinite_trace_not_member():
    p = HarmonicPolynomial.from_trace(2, {(2, 0): 0.5, (0, 2): -0.5, (0, 0): -1.0})
    assert classify_membership(p) is Membership.NOT_MEMBER


def test_quartic_positive_top_form():
    p = HarmonicPolynomial.from_trace(2, {(4, 0): 1.0, (0, 4): 1.0, (0, 0): -1.0})
    assert classify_membership(p) is Membership.MEMBER
    p = HarmonicPolynomial.from_trace(2, {(4, 0): 1.0, (0, 4): 1.0, (0, 0): 1.0})
    assert classify_membership(p) is Membership.EMPTY
    p = HarmonicPolynomial.from_trace(2, {(3, 0): 1.0, (0, 0): -1.0})
    assert classify_membership(p) is Membership.NOT_MEMBER


def test_rejects_odd_in_y():
    with pytest.raises(ValueError, match="not even in y"):
        HarmonicPolynomial(2, {(1, 0, 1): 1.0})


def test_rejects_non_harmonic():
    with pytest.raises(ValueError, match="not harmonic"):
        HarmonicPolynomial(2, {(2, 0, 0): 1.0})


def test_extension_is_harmonic_sympy():
    sympy = pytest.importorskip("sympy")
    x1, x2, y = sympy.symbols("x1 x2 y")
    terms = harmonic_extension(2, {(4, 0): 1.0, (2, 2): 3.0, (1, 1): -2.0, (0, 3): 0.5})
    expr = sum(c * x1 ** p[0] * x2 ** p[1] * y ** p[2] for p, c in terms.items())
    lap = sympy.diff(expr, x1, 2) + sympy.diff(expr, x2, 2) + sympy.diff(expr, y, 2)
    assert sympy.simplify(sympy.expand(lap)) == 0
    assert sympy.expand(expr.subs(y, 0) - (x1**4 + 3 * x1**2 * x2**2 - 2 * x1 * x2 + 0.5 * x2**3)) == 0


trace_strategy = st.dictionaries(
    st.tuples(st.integers(0, 4), st.integers(0, 4)).filter(lambda t: sum(t) <= 4),
    st.floats(-3, 3, allow_nan=False),
    min_size=1,
    max_size=6,
)


@settings(max_examples=60, deadline=None)
@given(trace_strategy, st.integers(0, 1))
def test_derivatives_stay_harmonic(trace, axis):
    p = HarmonicPolynomial.from_trace(2, trace)
    dp = p.derivative(axis)
    assert isinstance(dp, HarmonicPolynomial)
    assert not dp.laplacian().terms or max(abs(v) for v in dp.laplacian().terms.values()) < 1e-12
    dy = p.derivative(2)
    assert not dy.laplacian().terms or max(abs(v) for v in dy.laplacian().terms.values()) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(1e-3, 10.0))
def test_round_trip_membership(s1, s2, c):
    a = np.array([s1, s2]) / (s1 + s2)
    if a.min() < 1e-3:
        return
    q = make_normalized_quadratic(a / a.sum(), c)
    assert classify_membership(q.polynomial()) is Membership.MEMBER


def test_json_round_trip():
    p = make_normalized_quadratic([0.25, 0.75], 1.0).polynomial()
    obj = json.loads(p.dumps())
    assert set(obj) == {"d", "degree", "terms"}
    q = HarmonicPolynomial.from_json(obj)
    assert q.terms == p.terms


def _p():
    return make_normalized_quadratic([0.5, 0.5], 1.0).polynomial()


def test_fit_exact_polynomial():
    p = _p()
    fit = fit_exterior_expansion(p, 2, [4, 6, 8], d=2)
    keys = set(p.terms) | set(fit.polynomial.terms)
    err = max(abs(p.coefficient(k) - fit.polynomial.coefficient(k)) for k in keys)
    assert err <= 1e-9


def test_fit_with_ball_tail():
    p = _p()
    f = lambda X: p(X) + 1.0 / (3.0 * np.linalg.norm(X, axis=-1))
    fit = fit_exterior_expansion(f, 2, [4, 6, 8], d=2)
    keys = set(p.terms) | set(fit.polynomial.terms)
    err = max(abs(p.coefficient(k) - fit.polynomial.coefficient(k)) for k in keys)
    assert err <= 1e-2
    # the monopole is in the model, so in fact it is recovered far more precisely
    assert err <= 1e-9
    assert fit.tail[(0, 0)] == pytest.approx(1.0 / 3.0, rel=1e-8)


def test_fit_without_tail_model_still_within_tolerance():
    p = _p()
    f = lambda X: p(X) + 1.0 / (3.0 * np.linalg.norm(X, axis=-1))
    fit = fit_exterior_expansion(f, 2, [4, 6, 8], d=2, tail_degree=-1)
    keys = set(p.terms) | set(fit.polynomial.terms)
    err = max(abs(p.coefficient(k) - fit.polynomial.coefficient(k)) for k in keys)
    assert err <= 1e-1


def test_fit_rejects_odd_field():
    with pytest.raises(ValueError, match="not even in y"):
        fit_exterior_expansion(lambda X: X[:, 0] * X[:, 2], 2, [4, 6, 8], d=2)


def test_fit_rejects_non_harmonic():
    with pytest.raises(ValueError, match="not harmonic"):
        fit_exterior_expansion(lambda X: np.sum(X**2, axis=-1), 2, [4, 6, 8], d=2)


def test_fit_rejects_clustered_radii():
    p = _p()
    with pytest.raises(ValueError, match="ill-conditioned"):
        fit_exterior_expansion(p, 2, [4.0, 4.0 + 1e-7, 4.0 + 2e-7], d=2)


def test_fit_rejects_bad_radii():
    with pytest.raises(ValueError):
        fit_exterior_expansion(_p(), 2, [2, 6, 8], d=2)
    with pytest.raises(ValueError):
        fit_exterior_expansion(_p(), 2, [4, 8], d=2)


def test_fit_symmetric_field_has_no_odd_terms():
    p = _p()
    f = lambda X: p(X) + 0.2 / np.linalg.norm(X, axis=-1) ** 5 * (X[:, 0] ** 2 - X[:, 2] ** 2)
    fit = fit_exterior_expansion(f, 2, [4, 6, 8], d=2)
    assert fit.odd_coefficient_max <= max(fit.relative_residual, 1e-10) * 10


def test_basis_sizes():
    assert len(even_harmonic_basis(2, 2)) == 6
    assert len(even_harmonic_basis(3, 2)) == 10


def test_polynomial_eval_and_gradient():
    p = Polynomial(2, {(1, 1, 0): 2.0, (0, 0, 2): 1.0})
    X = np.array([1.0, 2.0, 3.0])
    assert p(X) == pytest.approx(13.0)
    np.testing.assert_allclose(p.gradient(X), [4.0, 2.0, 6.0])
