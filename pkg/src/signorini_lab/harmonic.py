"""Even-in-``y`` harmonic polynomials and the quadratic classes used for expansions.

An even-in-``y`` harmonic polynomial is determined by its trace on
``{y = 0}``: if ``q(x) = p(x, 0)`` then

    p(x, y) = sum_m (-1)^m y^(2m) / (2m)! * Lap_x^m q(x).

This extension is the projection used to enforce harmonicity.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import GridField, discrete_laplacian, interpolate, node_coordinates, sphere_quadrature

Powers = tuple[int, ...]

HARMONIC_TOL = 1e-12


class Polynomial:
    """Polynomial in ``d + 1`` variables ``(x_1, ..., x_d, y)`` stored as a sparse term map."""

    def __init__(self, d: int, terms: dict[Powers, float] | Iterable[tuple[Powers, float]]):
        self.d = int(d)
        items = terms.items() if isinstance(terms, dict) else terms
        clean: dict[Powers, float] = {}
        for powers, coeff in items:
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.d + 1 or min(powers) < 0:
                raise ValueError(f"bad multi-index {powers} for d={self.d}")
            clean[powers] = clean.get(powers, 0.0) + float(coeff)
        self.terms = {k: v for k, v in sorted(clean.items()) if v != 0.0}

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[:-1])
        for powers, c in self.terms.items():
            mono = np.ones(X.shape[:-1])
            for j, p in enumerate(powers):
                if p:
                    mono = mono * X[..., j] ** p
            out = out + c * mono
        return out

    def derivative(self, axis: int) -> "Polynomial":
        out = {}
        for powers, c in self.terms.items():
            p = powers[axis]
            if p:
                q = list(powers)
                q[axis] -= 1
                out[tuple(q)] = out.get(tuple(q), 0.0) + c * p
        return Polynomial(self.d, out)

    def gradient(self, X) -> np.ndarray:
        return np.stack([self.derivative(k)(X) for k in range(self.d + 1)], axis=-1)

    def laplacian(self) -> "Polynomial":
        out: dict[Powers, float] = {}
        for k in range(self.d + 1):
            for powers, c in self.derivative(k).derivative(k).terms.items():
                out[powers] = out.get(powers, 0.0) + c
        return Polynomial(self.d, out)

    def trace(self) -> dict[tuple[int, ...], float]:
        """Coefficients of ``p(x, 0)`` keyed by ``x`` multi-index."""
        return {k[:-1]: v for k, v in self.terms.items() if k[-1] == 0}

    def is_even_in_y(self) -> bool:
        return all(k[-1] % 2 == 0 for k in self.terms)

    def homogeneous_part(self, degree: int) -> "Polynomial":
        return Polynomial(self.d, {k: v for k, v in self.terms.items() if sum(k) == degree})

    def scaled(self, s: float) -> "Polynomial":
        return type(self)(self.d, {k: s * v for k, v in self.terms.items()})

    def __add__(self, other: "Polynomial") -> "Polynomial":
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return Polynomial(self.d, out)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + other.scaled(-1.0)

    def coefficient(self, powers: Sequence[int]) -> float:
        return self.terms.get(tuple(powers), 0.0)

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "degree": self.degree,
            "terms": [{"powers": list(k), "coeff": v} for k, v in self.terms.items()],
        }

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self.d}, terms={self.terms})"


def _lap_x(d: int, q: dict[tuple[int, ...], float]) -> dict[tuple[int, ...], float]:
    out: dict[tuple[int, ...], float] = {}
    for powers, c in q.items():
        for j in range(d):
            p = powers[j]
            if p >= 2:
                r = list(powers)
                r[j] -= 2
                out[tuple(r)] = out.get(tuple(r), 0.0) + c * p * (p - 1)
    return {k: v for k, v in out.items() if v != 0.0}


def harmonic_extension(d: int, trace: dict[tuple[int, ...], float]) -> dict[Powers, float]:
    """Term map of the even-in-``y`` harmonic polynomial with the given trace."""
    out: dict[Powers, float] = {}
    q = {tuple(k): float(v) for k, v in trace.items() if v != 0.0}
    m = 0
    while q:
        s = (-1) ** m / factorial(2 * m)
        for powers, c in q.items():
            key = tuple(powers) + (2 * m,)
            out[key] = out.get(key, 0.0) + s * c
        q = _lap_x(d, q)
        m += 1
    return out


class HarmonicPolynomial(Polynomial):
    """Polynomial that is even in ``y`` and harmonic; both are checked on construction."""

    def __init__(self, d: int, terms, degree: int | None = None):
        super().__init__(d, terms)
        if not self.is_even_in_y():
            raise ValueError("polynomial is not even in y")
        projected = harmonic_extension(self.d, self.trace())
        keys = set(projected) | set(self.terms)
        worst = max((abs(projected.get(k, 0.0) - self.terms.get(k, 0.0)) for k in keys), default=0.0)
        if worst > HARMONIC_TOL:
            raise ValueError(f"polynomial is not harmonic (projection moves a coefficient by {worst:.3g})")
        if degree is not None and self.degree > degree:
            raise ValueError(f"degree {self.degree} exceeds declared bound {degree}")
        self.bound = self.degree if degree is None else int(degree)

    @classmethod
    def from_trace(cls, d: int, trace: dict[tuple[int, ...], float]) -> "HarmonicPolynomial":
        return cls(d, harmonic_extension(d, trace))

    def derivative(self, axis: int) -> Polynomial:
        dp = super().derivative(axis)
        if axis < self.d:
            return HarmonicPolynomial(self.d, dp.terms)
        return dp

    def scaled(self, s: float) -> "HarmonicPolynomial":
        return HarmonicPolynomial(self.d, {k: s * v for k, v in self.terms.items()})

    @classmethod
    def from_json(cls, obj: dict) -> "HarmonicPolynomial":
        return cls(int(obj["d"]), {tuple(t["powers"]): float(t["coeff"]) for t in obj["terms"]})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass(frozen=True)
class NormalizedQuadratic:
    """``p = 1/2 sum a_j x_j^2 - 1/2 y^2 - c`` with ``a_j > 0`` and ``sum a_j = 1``."""

    a: tuple[float, ...]
    c: float

    @property
    def d(self) -> int:
        return len(self.a)

    def polynomial(self) -> HarmonicPolynomial:
        d = self.d
        terms: dict[Powers, float] = {}
        for j, aj in enumerate(self.a):
            key = [0] * (d + 1)
            key[j] = 2
            terms[tuple(key)] = 0.5 * aj
        terms[(0,) * d + (2,)] = -0.5
        if self.c:
            terms[(0,) * (d + 1)] = -self.c
        return HarmonicPolynomial(d, terms)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        a = np.asarray(self.a)
        return 0.5 * np.sum(a * X[..., :-1] ** 2, axis=-1) - 0.5 * X[..., -1] ** 2 - self.c

    def gradient(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        g = np.empty_like(X)
        g[..., :-1] = np.asarray(self.a) * X[..., :-1]
        g[..., -1] = -X[..., -1]
        return g

    def sublevel_radius(self) -> float:
        """Largest ``|x|`` in ``{p(., 0) <= 0}``."""
        if self.c <= 0:
            return 0.0
        return float(np.sqrt(2.0 * self.c / min(self.a)))


def make_normalized_quadratic(a: Sequence[float], c: float) -> NormalizedQuadratic:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or len(a) < 2:
        raise ValueError("need at least two coefficients")
    if np.any(a <= 0):
        raise ValueError("coefficients must be positive")
    total = float(np.sum(a))
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"sum != 1 (got {total!r})")
    return NormalizedQuadratic(tuple(float(x) for x in a / total), float(c))


class Membership(enum.Enum):
    MEMBER = "in P_c"
    BOUNDARY = "boundary case (c = 0)"
    EMPTY = "empty sublevel set"
    NOT_MEMBER = "not a member"


def _trace_eval(d: int, trace: dict, x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[:-1])
    for powers, c in trace.items():
        mono = np.ones(x.shape[:-1])
        for j, p in enumerate(powers):
            if p:
                mono = mono * x[..., j] ** p
        out = out + c * mono
    return out


def _unit_directions(d: int, n: int = 4096) -> np.ndarray:
    if d == 2:
        t = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    # Fibonacci-type spiral on S^(d-1) for d = 3
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5**0.5) * i
    r = np.sqrt(1.0 - z**2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def classify_membership(p: Polynomial, tol: float = 1e-12) -> Membership:
    """Decide whether ``{p(., 0) <= 0}`` is compact and non-empty.

    Degree two is decided exactly from the trace form.  For higher degree
    the top-degree trace form is sampled on the unit sphere of ``{y = 0}``;
    this is a sampling heuristic, not a proof.
    """
    if not isinstance(p, HarmonicPolynomial):
        p = HarmonicPolynomial(p.d, p.terms)
    d = p.d
    trace = p.trace()
    deg = max((sum(k) for k in trace), default=0)
    if deg == 0:
        return Membership.NOT_MEMBER
    if deg <= 2:
        A = np.zeros((d, d))
        b = np.zeros(d)
        c0 = trace.get((0,) * d, 0.0)
        for powers, c in trace.items():
            s = sum(powers)
            nz = [j for j, q in enumerate(powers) for _ in range(q)]
            if s == 2:
                i, j = nz
                if i == j:
                    A[i, i] += 2.0 * c
                else:
                    A[i, j] += c
                    A[j, i] += c
            elif s == 1:
                b[nz[0]] += c
        eig = np.linalg.eigvalsh(A)
        if eig.min() <= tol * max(1.0, abs(eig).max()):
            return Membership.NOT_MEMBER
        minimum = c0 - 0.5 * b @ np.linalg.solve(A, b)
        scale = max(1.0, abs(c0))
        if abs(minimum) <= tol * scale:
            return Membership.BOUNDARY
        return Membership.MEMBER if minimum < 0 else Membership.EMPTY
    if deg > 4:
        raise ValueError("classification implemented for degree <= 4")
    if deg % 2:
        return Membership.NOT_MEMBER
    top = {k: v for k, v in trace.items() if sum(k) == deg}
    dirs = _unit_directions(d)
    if _trace_eval(d, top, dirs).min() <= 0:
        return Membership.NOT_MEMBER
    # compact sublevel set: locate the minimum of the trace
    from scipy.optimize import minimize

    radii = np.geomspace(1e-3, 1e3, 61)
    cand = (radii[:, None, None] * dirs[None, ::16, :]).reshape(-1, d)
    vals = _trace_eval(d, trace, cand)
    best = cand[np.argsort(vals)[:8]]
    f = lambda x: float(_trace_eval(d, trace, np.asarray(x)[None, :])[0])
    minimum = min([f(np.zeros(d))] + [minimize(f, x0, method="BFGS").fun for x0 in best])
    scale = max(1.0, max(abs(v) for v in trace.values()))
    if abs(minimum) <= 1e-9 * scale:
        return Membership.BOUNDARY
    return Membership.MEMBER if minimum < 0 else Membership.EMPTY


def even_harmonic_basis(d: int, k: int) -> list[HarmonicPolynomial]:
    """Homogeneous even-in-``y`` harmonic polynomials, one per ``x`` monomial of degree <= k."""
    out = []
    for deg in range(k + 1):
        for powers in itertools.product(range(deg + 1), repeat=d):
            if sum(powers) == deg:
                out.append(HarmonicPolynomial.from_trace(d, {powers: 1.0}))
    return out


@dataclass
class ExpansionFit:
    polynomial: HarmonicPolynomial
    residual: float
    relative_residual: float
    condition: float
    tail: dict = field(default_factory=dict)
    harmonic_residual: float = 0.0
    odd_coefficient_max: float = 0.0


def _kelvin(poly: HarmonicPolynomial, d: int):
    """Exterior harmonic ``|X|^(1 - d - 2l) h(X)`` for homogeneous ``h`` of degree ``l``."""
    l = poly.degree

    def f(X):
        r = np.sqrt(np.sum(X**2, axis=-1))
        return r ** (1 - d - 2 * l) * poly(X)

    return f


def fit_exterior_expansion(
    f: Callable[[np.ndarray], np.ndarray] | GridField,
    k: int,
    radii: Sequence[float],
    d: int | None = None,
    tail_degree: int = 2,
    harmonic_tol: float = 1e-3,
    max_condition: float = 1e12,
    n_polar: int = 32,
    n_azimuth: int = 64,
) -> ExpansionFit:
    """Least-squares fit of the polynomial part of a field harmonic outside ``B_1``.

    The model is an even-in-``y`` harmonic polynomial of degree ``<= k``
    plus exterior harmonics decaying like ``|X|^(1-d-2l)``, ``l <= tail_degree``.
    Each sphere is weighted by ``r^(d-1)``.
    """
    if isinstance(f, GridField):
        d = f.spec.d
        field_ = f
        func = lambda X: interpolate(field_, X)
    else:
        if d is None:
            raise ValueError("d is required for callables")
        func = f
    if k > 4:
        raise ValueError("expansion degree k > 4 not supported")
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise ValueError("need at least three spheres")
    if min(radii) < 4 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be >= 4 and strictly increasing")

    pts, w, vals = [], [], []
    for r in radii:
        q = sphere_quadrature(d, r, n_polar, n_azimuth)
        pts.append(q.nodes)
        w.append(q.weights / r**d * r ** (d - 1))
        vals.append(np.asarray(func(q.nodes), dtype=float))
    P = np.concatenate(pts)
    W = np.concatenate(w)
    F = np.concatenate(vals)
    scale = max(np.max(np.abs(F)), 1e-300)

    Pm = P.copy()
    Pm[:, -1] *= -1.0
    odd = np.max(np.abs(np.asarray(func(Pm), dtype=float) - F))
    if odd > 1e-9 * scale:
        raise ValueError(f"field is not even in y (defect {odd:.3g})")

    if isinstance(f, GridField):
        lap = discrete_laplacian(f).values
        X = node_coordinates(f.spec)
        rr = np.sqrt(np.sum(X**2, axis=-1))
        sel = (rr >= radii[0]) & (rr <= radii[-1]) & np.isfinite(lap)
        harm = float(np.max(np.abs(lap[sel]))) if np.any(sel) else 0.0
        harm_scale = scale / radii[-1] ** 2
    else:
        s = 0.05
        probe = P[:: max(1, len(P) // 512)]
        lap = -2.0 * (d + 1) * np.asarray(func(probe), dtype=float)
        for j in range(d + 1):
            e = np.zeros(d + 1)
            e[j] = s
            lap = lap + np.asarray(func(probe + e)) + np.asarray(func(probe - e))
        harm = float(np.max(np.abs(lap / s**2)))
        harm_scale = scale / radii[-1] ** 2
    if harm > harmonic_tol * max(harm_scale, 1e-300) and harm > 1e-10:
        raise ValueError(f"field is not harmonic outside B_1 (Laplacian {harm:.3g})")

    basis = even_harmonic_basis(d, k)
    tails = [b for b in even_harmonic_basis(d, tail_degree)]
    cols = [b(P) for b in basis] + [_kelvin(t, d)(P) for t in tails]
    A = np.stack(cols, axis=-1)
    norms = np.max(np.abs(A), axis=0)
    norms[norms == 0] = 1.0
    sw = np.sqrt(W)
    As = A / norms * sw[:, None]
    sol, _, rank, sv = np.linalg.lstsq(As, F * sw, rcond=None)
    # condition number of the normal equations
    cond = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else np.inf
    if cond > max_condition or rank < As.shape[1]:
        raise ValueError(f"ill-conditioned expansion fit (condition {cond:.3g}); radii too clustered")
    coef = sol / norms
    nb = len(basis)
    poly = Polynomial(d, {})
    for c, b in zip(coef[:nb], basis):
        poly = poly + b.scaled(c)
    hp = HarmonicPolynomial(d, poly.terms, degree=k)
    resid = F - A @ coef
    rms = float(np.sqrt(np.sum(W * resid**2) / np.sum(W)))
    tail = {next(iter(t.trace())): float(c) for c, t in zip(coef[nb:], tails)}
    odd_max = max((abs(v) for kk, v in hp.terms.items() if any(p % 2 for p in kk[:-1])), default=0.0)
    return ExpansionFit(hp, rms, rms / scale, cond, tail, harm, odd_max)
