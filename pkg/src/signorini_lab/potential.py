"""Newtonian potentials of axis-aligned ellipsoids in ``R^(d+1)``.

With ``a_j = l_j^2`` and ``Q(s) = prod_k (a_k + s)`` the potential is

    V(X) = K * prod(l) * int_lam^inf (1 - sum_j X_j^2 / (a_j + s)) ds / sqrt(Q(s)),

where ``lam = 0`` inside the ellipsoid and ``lam`` is the confocal parameter
outside.  The constant ``K`` is fixed once by the unit ball, where
``Delta V = -1`` has the explicit radial solution.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .grid import sphere_quadrature


@dataclass(frozen=True)
class Ellipsoid:
    d: int
    semi_axes: tuple[float, ...]

    def __post_init__(self):
        ax = tuple(float(v) for v in self.semi_axes)
        object.__setattr__(self, "semi_axes", ax)
        if len(ax) != self.d + 1:
            raise ValueError(f"need {self.d + 1} semi-axes, got {len(ax)}")
        if min(ax[:-1]) <= 0 or ax[-1] < 0:
            raise ValueError("semi-axes must be positive (thickness may be zero)")

    @property
    def thin(self) -> bool:
        return self.semi_axes[-1] == 0.0

    @property
    def squares(self) -> np.ndarray:
        return np.asarray(self.semi_axes) ** 2

    def scaled(self, t: float) -> "Ellipsoid":
        return Ellipsoid(self.d, tuple(t * v for v in self.semi_axes))

    def contains(self, X, tol: float = 0.0) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.thin:
            a = self.squares[:-1]
            return (np.sum(X[..., :-1] ** 2 / a, axis=-1) <= 1.0 + tol) & (np.abs(X[..., -1]) <= tol)
        return np.sum(X**2 / self.squares, axis=-1) <= 1.0 + tol

    def to_json(self) -> dict:
        return {"d": self.d, "semi_axes": list(self.semi_axes)}

    @classmethod
    def from_json(cls, obj: dict) -> "Ellipsoid":
        return cls(int(obj["d"]), tuple(obj["semi_axes"]))


@dataclass(frozen=True)
class InteriorQuadratic:
    """``V_E(X) = c0 - 1/2 sum c_j X_j^2`` on ``E``."""

    c0: float
    c: tuple[float, ...]

    def to_json(self) -> dict:
        return {"c0": self.c0, "c": list(self.c)}


def _require_solid(E: Ellipsoid):
    if E.thin:
        raise ValueError("potential of a thin ellipsoid vanishes; need thickness > 0")


def _integrals_carlson(a: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``I0(lam)`` and ``I_j(lam)`` in three variables via Carlson's forms."""
    x, y, z = (a[k] + lam for k in range(3))
    i0 = 2.0 * special.elliprf(x, y, z)
    ij = np.stack(
        [
            (2.0 / 3.0) * special.elliprd(y, z, x),
            (2.0 / 3.0) * special.elliprd(z, x, y),
            (2.0 / 3.0) * special.elliprd(x, y, z),
        ],
        axis=-1,
    )
    return i0, ij


def _integrals_quadrature(a: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    # s = lam + amin * tan^2(t) maps [lam, inf) onto [0, pi/2)
    amin = float(a.min())

    def g(t):
        tt = np.tan(t)
        s = lam + amin * tt * tt
        jac = 2.0 * amin * tt / np.cos(t) ** 2
        q = np.prod(a + s)
        base = jac / np.sqrt(q)
        return np.concatenate([[base], base / (a + s)])

    val, err = integrate.quad_vec(g, 0.0, 0.5 * np.pi, epsrel=1e-13, epsabs=0.0, limit=400)
    if not np.all(np.isfinite(val)) or err > 1e-10 * np.max(np.abs(val)):
        raise RuntimeError("ellipsoid integral quadrature did not converge")
    return float(val[0]), val[1:]


def ellipsoid_integrals(a: Sequence[float], lam) -> tuple[np.ndarray, np.ndarray]:
    """``I0 = int ds / sqrt(Q)`` and ``I_j = int ds / ((a_j+s) sqrt(Q))`` from ``lam`` to infinity."""
    a = np.asarray(a, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if len(a) == 3:
        return _integrals_carlson(a, lam)
    flat = lam.ravel()
    i0 = np.empty(flat.shape)
    ij = np.empty(flat.shape + (len(a),))
    for k, l in enumerate(flat):
        i0[k], ij[k] = _integrals_quadrature(a, float(l))
    return i0.reshape(lam.shape), ij.reshape(lam.shape + (len(a),))


@lru_cache(maxsize=None)
def potential_constant(d: int) -> float:
    """Constant ``K`` calibrated on the unit ball, where ``V(0) = 1 / (2 (n - 2))``, ``n = d + 1``."""
    n = d + 1
    if n < 3:
        raise ValueError("need d >= 2")
    i0, _ = ellipsoid_integrals(np.ones(n), 0.0)
    return float((1.0 / (2.0 * (n - 2))) / i0)


def newton_constant(d: int) -> float:
    """``kappa_(d+1) = 1 / ((d+1)(d-1)|B_1|)`` for the kernel ``|X|^(1-d)``."""
    from .grid import ball_volume

    return 1.0 / ((d + 1) * (d - 1) * ball_volume(d))


def interior_coefficients(E: Ellipsoid) -> InteriorQuadratic:
    _require_solid(E)
    K = potential_constant(E.d)
    pl = float(np.prod(E.semi_axes))
    i0, ij = ellipsoid_integrals(E.squares, 0.0)
    c = 2.0 * K * pl * np.asarray(ij)
    return InteriorQuadratic(float(K * pl * i0), tuple(float(v) for v in c))


def confocal_parameter(E: Ellipsoid, X, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """Largest root ``lam >= 0`` of ``sum X_j^2 / (a_j + lam) = 1`` (``0`` inside ``E``)."""
    a = E.squares
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = X**2
    r2 = X2.sum(axis=-1)
    outside = np.sum(X2 / a, axis=-1) > 1.0
    lam = np.zeros(len(X))
    if not np.any(outside):
        return lam
    Xo = X2[outside]
    lo = np.maximum(0.0, r2[outside] - a.max())
    hi = np.maximum(lo, r2[outside] - a.min())
    # F is convex and decreasing, so Newton from the left of the root is monotone
    t = lo.copy()
    for _ in range(max_iter):
        F = np.sum(Xo / (a + t[:, None]), axis=-1) - 1.0
        dF = -np.sum(Xo / (a + t[:, None]) ** 2, axis=-1)
        step = -F / dF
        t_new = np.clip(t + step, lo, hi)
        done = np.abs(t_new - t) <= tol * np.maximum(1.0, t_new)
        t = t_new
        if np.all(done):
            break
    else:
        raise RuntimeError("confocal parameter iteration did not converge")
    lam[outside] = t
    return lam


class _Evaluator:
    def __init__(self, E: Ellipsoid):
        _require_solid(E)
        self.E = E
        self.a = E.squares
        self.K = potential_constant(E.d)
        self.pl = float(np.prod(E.semi_axes))
        self.q = interior_coefficients(E)

    def parts(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = confocal_parameter(self.E, X)
        i0 = np.full(len(X), self.q.c0 / (self.K * self.pl))
        ij = np.tile(np.asarray(self.q.c) / (2.0 * self.K * self.pl), (len(X), 1))
        out = lam > 0
        if np.any(out):
            i0[out], ij[out] = ellipsoid_integrals(self.a, lam[out])
        return X, lam, i0, ij

    def value(self, X):
        X, lam, i0, ij = self.parts(X)
        return self.K * self.pl * (i0 - np.sum(X**2 * ij, axis=-1))

    def gradient(self, X):
        X, lam, i0, ij = self.parts(X)
        return -2.0 * self.K * self.pl * X * ij

    def hessian(self, X):
        X, lam, i0, ij = self.parts(X)
        kp = self.K * self.pl
        H = -2.0 * kp * ij[:, :, None] * np.eye(len(self.a))[None]
        out = lam > 0
        if np.any(out):
            Xo, lo = X[out], lam[out]
            b = Xo / (self.a + lo[:, None])
            s2 = np.sum(Xo**2 / (self.a + lo[:, None]) ** 2, axis=-1)
            sq = np.sqrt(np.prod(self.a + lo[:, None], axis=-1))
            H[out] += 4.0 * kp * b[:, :, None] * b[:, None, :] / (s2 * sq)[:, None, None]
        return H


def _squeeze(v, X):
    return float(v[0]) if np.ndim(X) == 1 else v


def potential_at(E: Ellipsoid, X):
    """``V_E`` at a point or an ``(N, d+1)`` array of points."""
    return _squeeze(_Evaluator(E).value(X), X)


def potential_gradient(E: Ellipsoid, X):
    g = _Evaluator(E).gradient(X)
    return g[0] if np.ndim(X) == 1 else g


@dataclass
class DecayReport:
    max_value: float
    bound: float
    certified: bool
    n_samples: int
    scale: float


def decay_certificate(E: Ellipsoid, R: float, m: float, n_polar: int = 32, n_azimuth: int = 64) -> DecayReport:
    """Compare ``max V_E`` on ``dB_(mR)`` with ``(m-1)^(1-d)`` after normalising ``V_E(0) = 1``."""
    _require_solid(E)
    if m <= 1:
        raise ValueError("m must exceed 1")
    if max(E.semi_axes) > R * (1.0 + 1e-12):
        raise ValueError("ellipsoid not contained in B_R")
    t = 1.0 / np.sqrt(interior_coefficients(E).c0)
    Et = E.scaled(t)
    q = sphere_quadrature(E.d, m * R * t, n_polar, n_azimuth)
    vmax = float(np.max(potential_at(Et, q.nodes)))
    bound = (m - 1.0) ** (1 - E.d)
    return DecayReport(vmax, bound, vmax <= bound, len(q.nodes), float(t))


@dataclass
class InverseInfo:
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


def _shape_coefficients(logl: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(interior_coefficients(Ellipsoid(d, tuple(np.exp(logl)))).c)


def solve_inverse_ellipsoid(
    a: Sequence[float],
    target_c0: float,
    tol: float = 1e-10,
    max_iter: int = 50,
    fd_step: float = 1e-6,
    full_output: bool = False,
):
    """Ellipsoid with interior coefficients ``c = a`` and ``c0 = target_c0``.

    Newton in ``log l``.  The coefficients are scale invariant, so the
    Jacobian of the first ``d`` equations has the null vector ``(1, ..., 1)``;
    the minimum-norm step keeps ``prod l`` fixed.
    """
    a = np.asarray(a, dtype=float)
    n = len(a)
    d = n - 1
    if np.any(a <= 0):
        raise ValueError("coefficients must be positive")
    if abs(a.sum() - 1.0) > 1e-10:
        raise ValueError(f"coefficients must sum to 1 (got {a.sum()!r})")
    if target_c0 <= 0:
        raise ValueError("target_c0 must be positive")
    if a.min() <= 1e-6:
        warnings.warn("degenerate coefficients: Newton solve is ill-conditioned", RuntimeWarning)
    x = -np.log(a)
    x -= x.mean()
    c = _shape_coefficients(x, d)
    res = np.max(np.abs(c - a))
    best = (res, x.copy())
    info = InverseInfo(0, res, False, [res])
    for it in range(1, max_iter + 1):
        if res <= tol:
            info.converged = True
            break
        J = np.empty((d, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = fd_step
            J[:, k] = (_shape_coefficients(x + e, d)[:d] - _shape_coefficients(x - e, d)[:d]) / (2 * fd_step)
        step = np.linalg.lstsq(J, a[:d] - c[:d], rcond=None)[0]
        big = np.max(np.abs(step))
        if big > 2.0:
            step *= 2.0 / big
        t = 1.0
        while True:
            xn = x + t * step
            cn = _shape_coefficients(xn, d)
            rn = np.max(np.abs(cn - a))
            if rn < res or t < 1e-4:
                break
            t *= 0.5
        x, c, res = xn - xn.mean(), cn, rn
        info.iterations = it
        info.history.append(res)
        if res < best[0]:
            best = (res, x.copy())
    else:
        info.converged = res <= tol
    info.residual = best[0]
    E = Ellipsoid(d, tuple(np.exp(best[1])))
    E = E.scaled(np.sqrt(target_c0 / interior_coefficients(E).c0))
    if not info.converged:
        warnings.warn(f"inverse ellipsoid Newton did not converge (residual {info.residual:.3g})", RuntimeWarning)
    return (E, info) if full_output else E


@dataclass
class PotentialSolution:
    """``U = P - c0 + V_E`` with ``P = 1/2 sum c_j X_j^2``; vanishes exactly on ``E``."""

    E: Ellipsoid
    q: InteriorQuadratic
    _ev: _Evaluator = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self._ev is None:
            self._ev = _Evaluator(self.E)

    @property
    def d(self) -> int:
        return self.E.d

    def P(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return 0.5 * np.sum(np.asarray(self.q.c) * X**2, axis=-1)

    def _flat(self, X):
        X = np.asarray(X, dtype=float)
        return X.reshape(-1, X.shape[-1]), X.shape[:-1]

    def __call__(self, X):
        Xa, lead = self._flat(X)
        inside = self.E.contains(Xa)
        v = np.zeros(len(Xa))
        out = ~inside
        if np.any(out):
            v[out] = self.P(Xa[out]) - self.q.c0 + self._ev.value(Xa[out])
        return v.reshape(lead) if lead else float(v[0])

    def gradient(self, X):
        Xa, lead = self._flat(X)
        g = np.asarray(self.q.c) * Xa + self._ev.gradient(Xa)
        g[self.E.contains(Xa)] = 0.0
        return g.reshape(lead + (Xa.shape[1],))

    def hessian(self, X):
        Xa, lead = self._flat(X)
        H = np.diag(self.q.c)[None] + self._ev.hessian(Xa)
        H[self.E.contains(Xa)] = 0.0
        return H.reshape(lead + H.shape[1:])

    def laplacian(self, X):
        v = np.trace(self.hessian(X), axis1=-2, axis2=-1)
        return v if np.ndim(v) else float(v)

    def to_json(self) -> dict:
        return {"ellipsoid": self.E.to_json(), "interior": self.q.to_json()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def build_obstacle_solution(E: Ellipsoid) -> PotentialSolution:
    return PotentialSolution(E, interior_coefficients(E))


def parse_float_list(text: str) -> tuple[float, ...]:
    """Comma-separated decimals, as accepted on the command line."""
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError as exc:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise ValueError("empty list")
    return vals
