import numpy as np
import pytest
import sympy as sp

from signorini_lab.grid import GridSpec, node_coordinates, discrete_laplacian
from signorini_lab.harmonic import make_normalized_quadratic
from signorini_lab.obstacle import SolverConfig, extract_contact_set
from signorini_lab.potential import Ellipsoid, build_obstacle_solution
from signorini_lab.thin import (
    ThinProblemSpec,
    construct_global_from_polynomial,
    nondegeneracy_check,
    rescale_quadratic,
    signorini_defects,
    solve_thin,
    thin_lcp_oracle,
    uniqueness_experiment,
)

TIGHT = SolverConfig(tol=1e-13, nested=False)


def profile(X):
    z = X[..., 0] + 1j * np.abs(X[..., -1])
    return np.real(z**1.5)


def test_profile_is_a_signorini_solution_symbolically():
    # u = r^(3/2) cos(3 theta / 2) in the (x1, |y|) half-plane, theta in [0, pi]
    r, th = sp.symbols("r theta", positive=True)
    u = r ** sp.Rational(3, 2) * sp.cos(3 * th / 2)
    lap = sp.diff(r * sp.diff(u, r), r) / r + sp.diff(u, th, 2) / r**2
    assert sp.simplify(lap) == 0
    # vanishes on the contact half-line x1 < 0, positive on x1 > 0
    assert sp.simplify(u.subs(th, sp.pi)) == 0
    assert sp.simplify(u.subs(th, 0)) == r ** sp.Rational(3, 2)
    # du/dy at y = 0+ on x1 < 0: -(1/r) du/dtheta at theta = pi
    dy = sp.simplify(-sp.diff(u, th).subs(th, sp.pi) / r)
    assert sp.simplify(dy + sp.Rational(3, 2) * sp.sqrt(r)) == 0
    # numeric callable agrees with the polar form
    X = np.array([[0.3, 0.0, 0.4], [-0.5, 0.1, 0.2], [-0.2, 0.0, 0.0]])
    rr = np.hypot(X[:, 0], X[:, 2])
    t = np.arctan2(np.abs(X[:, 2]), X[:, 0])
    assert np.allclose(profile(X), rr**1.5 * np.cos(1.5 * t))


def test_spec_requires_even_y():
    with pytest.raises(ValueError, match="even-in-y"):
        ThinProblemSpec(GridSpec(2, 1.0, 0.25, (True, True, False)), lambda X: 0 * X[..., 0])


def small():
    return GridSpec(2, 1.0, 0.2, (True, True, True))


@pytest.mark.parametrize("c", [0.05, 0.2, 0.6])
def test_psor_equals_oracle(c):
    p = make_normalized_quadratic([0.5, 0.5], c)
    spec = ThinProblemSpec(small(), p)
    ref = thin_lcp_oracle(spec)
    u = solve_thin(spec, TIGHT)
    assert u.meta["converged"]
    assert np.max(np.abs(u.values - ref.values)) <= 1e-10


def test_psor_equals_oracle_with_obstacle():
    g = GridSpec(2, 1.0, 0.25, (False, True, True))
    spec = ThinProblemSpec(g, lambda X: 0.1 * X[..., 0], thin_obstacle=lambda X: 0.05 - 0.1 * np.sum(X**2, axis=-1))
    ref = thin_lcp_oracle(spec)
    u = solve_thin(spec, TIGHT)
    assert np.max(np.abs(u.values - ref.values)) <= 1e-10


def test_inactive_constraint_returns_p():
    p = make_normalized_quadratic([0.5, 0.5], -1.0)
    g = GridSpec(2, 1.0, 1 / 8, (True, True, True))
    u = solve_thin(ThinProblemSpec(g, p), SolverConfig(tol=1e-11))
    X = node_coordinates(g)
    # harmonic quadratics are reproduced exactly by the stencil
    assert np.max(np.abs(u.values - p(X))) <= 1e-9
    assert extract_contact_set(u, thin=True).empty


def test_full_contact_when_obstacle_is_high():
    g = GridSpec(2, 1.0, 1 / 8, (True, True, True))
    spec = ThinProblemSpec(g, lambda X: 0 * X[..., 0], thin_obstacle=lambda X: np.ones(X.shape[:-1]))
    u = solve_thin(spec, SolverConfig(tol=1e-11))
    plane = u.plane()[:-1, :-1]
    assert np.all(plane == 1.0)
    dfx = signorini_defects(u, psi=lambda X: np.ones(X.shape[:-1]))
    assert dfx["max_gap_times_dy"] <= 1e-12
    assert dfx["max_dy_on_contact"] <= 0


@pytest.fixture(scope="module")
def profile_solves():
    out = {}
    for n in (16, 32):
        g = GridSpec(2, 1.0, 1.0 / n, (False, True, True))
        out[n] = solve_thin(ThinProblemSpec(g, profile), SolverConfig(omega="auto", tol=1e-10))
    return out


def test_profile_reproduced(profile_solves):
    errs = {}
    for n, u in profile_solves.items():
        X = node_coordinates(u.spec)
        errs[n] = np.max(np.abs(u.values - profile(X)))
        assert errs[n] <= 0.5 / n
    assert errs[32] < errs[16]


def test_profile_contact_half_plane(profile_solves):
    u = profile_solves[32]
    h = u.spec.spacing
    cs = extract_contact_set(u, thin=True)
    x1 = u.spec.axis(0)
    # columns well inside each half-plane
    assert np.all(cs.cells[x1 <= -2 * h, :-1])
    assert not np.any(cs.cells[x1 >= 2 * h, :])


def test_signorini_complementarity(profile_solves):
    u = profile_solves[32]
    dfx = signorini_defects(u)
    assert dfx["min_gap"] >= -1e-8
    assert dfx["max_gap_times_dy"] <= 1e-6
    assert dfx["max_dy_on_contact"] <= 1e-6
    assert dfx["max_abs_laplacian_off_plane"] <= 1e-6
    assert dfx["max_laplacian_plane"] <= 1e-6


def test_comparison_principle():
    g = GridSpec(2, 1.0, 1 / 8, (True, True, True))
    p1 = make_normalized_quadratic([0.5, 0.5], 0.3)
    p2 = make_normalized_quadratic([0.5, 0.5], 0.1)
    cfg = SolverConfig(tol=1e-11)
    u1 = solve_thin(ThinProblemSpec(g, p1), cfg)
    u2 = solve_thin(ThinProblemSpec(g, p2), cfg)
    assert np.all(u1.values <= u2.values + 1e-8)


def test_rescale_quadratic():
    p = make_normalized_quadratic([0.5, 0.5], 1.0)
    pt, t = rescale_quadratic(p)
    assert t == pytest.approx(2.0)
    X = np.array([[1.0, 0.0, 0.0], [0.3, 0.4, 0.1]])
    assert np.allclose(pt(X), p(t * X) / t**2)
    assert pt(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-14)


def test_construct_global_coarse():
    p = make_normalized_quadratic([0.5, 0.5], 1.0)
    h = 1 / 8
    u, certs, rep = construct_global_from_polynomial(p, [3, 4], h=h)
    assert all(c.max_violation <= 10 * h * h for c in certs)
    assert rep["contact_in_sublevel_set"]
    assert rep["m"] == pytest.approx(0.25)
    assert rep["converged"]
    assert len(rep["cauchy"]) == 1


def test_construct_global_rejects_empty_sublevel_set():
    p = make_normalized_quadratic([0.5, 0.5], -1.0)
    with pytest.raises(ValueError, match="not in the class"):
        construct_global_from_polynomial(p, [4, 6])


def test_nondegeneracy_inapplicable_for_eps_zero():
    a = (0.5, 0.5)
    delta = 0.1

    def P(X):
        y2 = X[..., -1] ** 2
        return 0.5 * y2 + 0.5 * delta * (0.5 * np.sum(X[..., :-1] ** 2, axis=-1) - y2)

    res = nondegeneracy_check(P, a, 0.0, delta, 2.0, h=0.05)
    assert not res.applicable
    assert not res


def test_nondegeneracy_on_analytic_solution():
    # the n = 16 member of the expansion family with R = 4 R0
    from signorini_lab.linearization import build_expansion_sequence

    p = make_normalized_quadratic([0.5, 0.5], 1.0)
    seq = build_expansion_sequence(p, [4, 16])
    mem = seq.members[1]
    n = mem.n
    R = 4 * seq.R0
    res = nondegeneracy_check(mem.U, p.a, 1 / (2 * n), 1 / n, R, h=1 / 32)
    assert res.applicable
    assert res.holds
    assert res.required_radius == pytest.approx(1 / (2 * R) - 1 / 32)


def test_nondegeneracy_vacuous_beyond_box():
    g = GridSpec(2, 2.0, 1 / 8, (True, True, True))
    from signorini_lab.grid import GridField

    # U = -1 satisfies U <= P - eps; the required disc radius eps / (delta R) is far outside the box
    U = GridField(g, -np.ones(g.shape))
    res = nondegeneracy_check(U, (0.5, 0.5), 0.01, 1e-4, 1.5)
    assert res.applicable
    assert res.vacuous
    assert res.holds


def test_uniqueness_rejects_negative_scale():
    with pytest.raises(ValueError, match="positive"):
        uniqueness_experiment(Ellipsoid(2, (0.3, 0.2, 0.0)), -1.0)


def test_uniqueness_identity_scale():
    rep = uniqueness_experiment(Ellipsoid(2, (0.3, 0.2, 0.0)), 1.0, h=1 / 8, thickness_list=[0.2, 0.1, 0.05])
    assert rep.median_ratio == 1.0
    assert rep.max_deviation == 0.0
