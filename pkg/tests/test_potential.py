import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import kappa, newtonian_potential
from signorini_lab.potential import (
    Ellipsoid,
    build_obstacle_solution,
    confocal_parameter,
    decay_certificate,
    interior_coefficients,
    newton_constant,
    parse_float_list,
    potential_at,
    potential_gradient,
    solve_inverse_ellipsoid,
)


def test_kappa_three_dimensions():
    assert newton_constant(2) == pytest.approx(1.0 / (4.0 * np.pi), rel=1e-15)
    assert kappa(2) == pytest.approx(1.0 / (4.0 * np.pi), rel=1e-15)


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_ball_interior_coefficients(rho):
    q = interior_coefficients(Ellipsoid(2, (rho, rho, rho)))
    np.testing.assert_allclose(q.c, 1.0 / 3.0, atol=1e-14)
    assert q.c0 == pytest.approx(rho**2 / 2, rel=1e-13)


def test_ball_closed_forms():
    E = Ellipsoid(2, (1.0, 1.0, 1.0))
    assert potential_at(E, [0.0, 0.0, 0.0]) == pytest.approx(0.5, abs=1e-8)
    assert potential_at(E, [2.0, 0.0, 0.0]) == pytest.approx(1.0 / 6.0, abs=1e-8)
    X = np.array([[0.3, -1.1, 2.0], [0.0, 0.0, 5.0]])
    r = np.linalg.norm(X, axis=1)
    np.testing.assert_allclose(potential_at(E, X), 1.0 / (3.0 * r), atol=1e-12)


@pytest.mark.parametrize("axes", [(2, 1, 1), (0.3, 0.3, 0.2), (1, 2, 3), (5, 1, 0.5)])
def test_coefficients_sum_to_one(axes):
    assert sum(interior_coefficients(Ellipsoid(2, axes)).c) == pytest.approx(1.0, abs=1e-10)


def test_coefficients_sum_to_one_d3():
    q = interior_coefficients(Ellipsoid(3, (2.0, 1.0, 0.7, 0.4)))
    assert sum(q.c) == pytest.approx(1.0, abs=1e-10)
    ball = interior_coefficients(Ellipsoid(3, (1.0, 1.0, 1.0, 1.0)))
    np.testing.assert_allclose(ball.c, 0.25, atol=1e-12)


@pytest.mark.parametrize("X", [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
def test_oracle_prolate(X):
    E = Ellipsoid(2, (2.0, 1.0, 1.0))
    assert abs(potential_at(E, X) - newtonian_potential(E.semi_axes, X)) <= 1e-4


def test_oracle_d3_interior():
    E = Ellipsoid(3, (2.0, 1.0, 0.7, 0.4))
    X = [0.3, -0.2, 0.1, 0.05]
    assert abs(potential_at(E, X) - newtonian_potential(E.semi_axes, X, 32, 64)) <= 1e-6


def _random_ellipsoid(rng):
    ratio = rng.uniform(1.0, 10.0)
    ax = np.exp(rng.uniform(0.0, np.log(ratio), size=3))
    ax[rng.integers(3)] = 1.0
    ax[rng.integers(3)] = ratio
    return Ellipsoid(2, tuple(ax * rng.uniform(0.5, 2.0)))


def _random_points(rng, E, n):
    ax = np.asarray(E.semi_axes)
    pts = []
    while len(pts) < n:
        X = rng.uniform(-1.6, 1.6, size=3) * ax
        s = np.sum(X**2 / ax**2)
        if abs(s - 1.0) > 1e-3:
            pts.append(X)
    return np.array(pts)


def test_oracle_equivalence_random():
    rng = np.random.default_rng(20240611)
    worst = 0.0
    for _ in range(5):
        E = _random_ellipsoid(rng)
        X = _random_points(rng, E, 20)
        fast = potential_at(E, X)
        for x, v in zip(X, fast):
            worst = max(worst, abs(v - newtonian_potential(E.semi_axes, x)))
    assert worst <= 1e-4, worst


def test_boundary_continuity():
    rng = np.random.default_rng(3)
    for _ in range(5):
        E = _random_ellipsoid(rng)
        w = rng.standard_normal((50, 3))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        ax = np.asarray(E.semi_axes)
        on = w * ax / np.sqrt(np.sum(w**2, axis=1, keepdims=True))
        on /= np.sqrt(np.sum(on**2 / ax**2, axis=1, keepdims=True))
        q = interior_coefficients(E)
        inner = q.c0 - 0.5 * np.sum(np.asarray(q.c) * on**2, axis=1)
        outer = potential_at(E, on * (1.0 + 1e-12))
        np.testing.assert_allclose(outer, inner, atol=1e-8)
        g_in = -np.asarray(q.c) * on
        g_out = potential_gradient(E, on * (1.0 + 1e-12))
        np.testing.assert_allclose(g_out, g_in, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(
    st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3),
    st.lists(st.floats(-4.0, 4.0), min_size=3, max_size=3),
    st.sampled_from([0.5, 2.0]),
)
def test_scaling_law(axes, X, t):
    E = Ellipsoid(2, tuple(axes))
    X = np.asarray(X)
    lhs = potential_at(E.scaled(t), t * X)
    rhs = t * t * potential_at(E, X)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3),
    st.lists(st.floats(-6.0, 6.0), min_size=3, max_size=3),
)
def test_confocal_root(axes, X):
    E = Ellipsoid(2, tuple(axes))
    X = np.asarray(X)
    lam = confocal_parameter(E, X)[0]
    s = np.sum(X**2 / E.squares)
    if s <= 1.0:
        assert lam == 0.0
    else:
        assert lam > 0
        assert np.sum(X**2 / (E.squares + lam)) == pytest.approx(1.0, abs=1e-12)


def test_hessian_against_finite_differences():
    U = build_obstacle_solution(Ellipsoid(2, (1.5, 0.7, 0.4)))
    rng = np.random.default_rng(1)
    X = rng.uniform(-3, 3, size=(20, 3))
    X = X[~U.E.contains(X, tol=0.2)]
    H = U.hessian(X)
    eps = 1e-5
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        fd = (U.gradient(X + e) - U.gradient(X - e)) / (2 * eps)
        np.testing.assert_allclose(H[:, :, k], fd, atol=1e-7)
    np.testing.assert_allclose(U.laplacian(X), 1.0, atol=1e-12)


def test_obstacle_solution_ball():
    U = build_obstacle_solution(Ellipsoid(2, (1.0, 1.0, 1.0)))
    assert U([0.0, 0.0, 0.0]) == 0.0
    assert U([1.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-14)
    assert U([2.0, 0.0, 0.0]) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_obstacle_solution_vanishes_on_E_and_laplacian():
    E = Ellipsoid(2, (0.3, 0.3, 0.2))
    U = build_obstacle_solution(E)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, size=(4000, 3)) * np.asarray(E.semi_axes)
    inside = pts[E.contains(pts)]
    assert np.max(np.abs(U(inside))) <= 1e-10
    # the exterior formula must also vanish at points of E
    Pv = U.P(inside) - U.q.c0 + U._ev.value(inside)
    assert np.max(np.abs(Pv)) <= 1e-10
    np.testing.assert_array_equal(U.laplacian(inside), 0.0)
    outside = rng.uniform(-2, 2, size=(200, 3))
    outside = outside[~E.contains(outside)]
    np.testing.assert_allclose(U.laplacian(outside), 1.0, atol=1e-12)


def test_obstacle_solution_nonnegative_on_grid():
    E = Ellipsoid(2, (1.2, 0.6, 0.3))
    U = build_obstacle_solution(E)
    R = 4 * max(E.semi_axes)
    g = np.linspace(-R, R, 65)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    X = X[np.linalg.norm(X, axis=1) <= R]
    assert U(X).min() >= -1e-8


def test_decay_certificate_ball():
    rho = np.sqrt(2.0)
    rep = decay_certificate(Ellipsoid(2, (rho, rho, rho)), rho, 4.0)
    assert rep.n_samples >= 1000
    assert rep.bound == pytest.approx(1.0 / 3.0)
    assert rep.max_value == pytest.approx(rho**3 / (3 * 4 * rho), rel=1e-10)
    assert rep.certified


def test_decay_certificate_limits():
    E = Ellipsoid(2, (1.0, 0.5, 0.25))
    assert decay_certificate(E, 1.0, 1.0 + 1e-6).certified
    with pytest.raises(ValueError):
        decay_certificate(E, 0.9, 4.0)


def test_inverse_ball():
    E, info = solve_inverse_ellipsoid([1 / 3, 1 / 3, 1 / 3], 1.0, full_output=True)
    np.testing.assert_allclose(E.semi_axes, np.sqrt(2.0), atol=1e-8)
    assert info.converged


def test_inverse_oblate():
    a = np.array([0.25, 0.25, 0.5])
    E = solve_inverse_ellipsoid(a, 1.0)
    l1, l2, ly = E.semi_axes
    assert l1 == pytest.approx(l2, rel=1e-9)
    assert l1 > ly
    q = interior_coefficients(E)
    assert np.max(np.abs(np.asarray(q.c) - a)) <= 1e-10
    assert q.c0 == pytest.approx(1.0, rel=1e-12)


def test_inverse_random_simplex():
    rng = np.random.default_rng(11)
    for _ in range(10):
        while True:
            a = rng.dirichlet(np.ones(3))
            if a.min() >= 0.05:
                break
        E, info = solve_inverse_ellipsoid(a, rng.uniform(0.1, 3.0), full_output=True)
        assert info.converged and info.iterations <= 25
        c = np.asarray(interior_coefficients(E).c)
        assert np.max(np.abs(c - a)) <= 1e-10


def test_inverse_thinning_sequence():
    base = np.array([0.5, 0.5])
    ratios = []
    for n in (4, 16, 64, 256):
        a = np.concatenate([base / n, [1.0 - 1.0 / n]])
        E = solve_inverse_ellipsoid(a, 1.0 / n)
        ratios.append(E.semi_axes[-1] / max(E.semi_axes[:-1]))
        assert E.semi_axes[-1] <= 2.0 / np.sqrt(n)
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 0.01


def test_monotone_thinness_family():
    ratios = []
    for ay in (0.3, 0.4, 0.5, 0.6, 0.7):
        a = [0.4 * (1 - ay), 0.6 * (1 - ay), ay]
        E = solve_inverse_ellipsoid(a, 1.0)
        ratios.append(E.semi_axes[-1] / E.semi_axes[0])
    assert all(b < a for a, b in zip(ratios, ratios[1:]))


def test_inverse_d3():
    a = np.array([0.2, 0.2, 0.3, 0.3])
    E, info = solve_inverse_ellipsoid(a, 1.0, full_output=True)
    assert info.converged
    assert np.max(np.abs(np.asarray(interior_coefficients(E).c) - a)) <= 1e-10


def test_inverse_degenerate_warns():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        solve_inverse_ellipsoid([1e-7, 0.5 - 1e-7, 0.5], 1.0, max_iter=3)
    assert any("degenerate" in str(w.message) for w in rec)


def test_inverse_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_inverse_ellipsoid([0.5, 0.6, -0.1], 1.0)
    with pytest.raises(ValueError):
        solve_inverse_ellipsoid([0.5, 0.5, 0.5], 1.0)


def test_thin_ellipsoid_has_no_potential():
    with pytest.raises(ValueError):
        potential_at(Ellipsoid(2, (0.3, 0.2, 0.0)), [0.0, 0.0, 0.0])


def test_parse_float_list():
    assert parse_float_list("0.3,0.2,0.1") == (0.3, 0.2, 0.1)
    with pytest.raises(ValueError):
        parse_float_list("0.3,x")
