"""Thin limits of ellipsoidal obstacle solutions.

Two families are built from analytic solutions ``U_n = P_n - c0 + V_(E_n)``:

* the flattening family: ``E_n`` keeps the planar semi-axes of a target
  thin ellipse and loses thickness; ``(U_n - y^2/2)`` normalised on
  ``dB_1`` converges to a thin obstacle solution with contact set ``E'``;
* the expansion family: ``E_n`` solves the inverse problem for
  ``P_n = y^2/2 + p/n``; ``n (U_n - y^2/2) = p + n V_n`` converges to a
  global solution with blow-down ``p``.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridField, GridSpec, sample_field, sphere_integral, sphere_quadrature
from .harmonic import Membership, NormalizedQuadratic, classify_membership
from .obstacle import extract_contact_set
from .potential import Ellipsoid, PotentialSolution, build_obstacle_solution, solve_inverse_ellipsoid


def _ray_exit(E: Ellipsoid):
    a = E.squares

    def breaks(dirs):
        return 1.0 / np.sqrt(np.sum(dirs**2 / a, axis=-1))

    return breaks


@dataclass
class ShiftedSolution:
    """``scale * (U - y^2/2)`` as an analytic field with value, gradient and Laplacian."""

    U: PotentialSolution
    scale: float

    @property
    def d(self) -> int:
        return self.U.d

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return self.scale * (self.U(X) - 0.5 * X[..., -1] ** 2)

    def gradient(self, X):
        X = np.asarray(X, dtype=float)
        g = np.array(self.U.gradient(X), dtype=float)
        g[..., -1] -= X[..., -1]
        return self.scale * g

    def laplacian(self, X):
        return self.scale * (np.asarray(self.U.laplacian(X)) - 1.0)

    def breaks(self, dirs):
        return _ray_exit(self.U.E)(dirs)


def boundary_norm(f, d: int, r: float = 1.0) -> float:
    q = sphere_quadrature(d, r)
    return float(np.sqrt(sphere_integral(lambda X: f(X) ** 2, q)))


def _ball_sample(d: int, radius: float, n: int = 65) -> np.ndarray:
    g = np.linspace(-radius, radius, n)
    X = np.stack(np.meshgrid(*([g] * (d + 1)), indexing="ij"), axis=-1).reshape(-1, d + 1)
    return X[np.sum(X**2, axis=1) <= radius**2]


@dataclass
class Member:
    thickness: float
    U: PotentialSolution
    norm: float
    W: ShiftedSolution

    def to_json(self) -> dict:
        return {"ellipsoid": self.U.E.to_json(), "c0": self.U.q.c0, "norm": self.norm}


@dataclass
class LinearizationSequence:
    thin_target: Ellipsoid
    thickness_list: list
    members: list
    gaps: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "thin_target": self.thin_target.to_json(),
            "thickness_list": list(self.thickness_list),
            "members": [m.to_json() for m in self.members],
            "gaps": list(self.gaps),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_theorem1_sequence(
    Eprime: Ellipsoid,
    thickness_list: Sequence[float],
    gap_radius: float = 2.0,
    n_sample: int = 65,
    workers: int = 1,
) -> LinearizationSequence:
    """Thickened ellipsoids ``(l_1, ..., l_d, t_n)`` and their normalised differences from ``y^2/2``."""
    if not Eprime.thin:
        raise ValueError("target must be a thin ellipsoid (zero y semi-axis)")
    axes = Eprime.semi_axes[:-1]
    if max(axes) >= 0.5:
        raise ValueError("rescale required: planar semi-axes must be < 1/2")
    thickness_list = [float(t) for t in thickness_list]
    if any(t <= 0 or t >= 0.5 for t in thickness_list):
        raise ValueError("thicknesses must lie in (0, 1/2)")
    if any(b >= a for a, b in zip(thickness_list, thickness_list[1:])):
        raise ValueError("thicknesses must be strictly decreasing")
    d = Eprime.d

    def member(t):
        U = build_obstacle_solution(Ellipsoid(d, tuple(axes) + (t,)))
        norm = boundary_norm(ShiftedSolution(U, 1.0), d)
        return Member(t, U, norm, ShiftedSolution(U, 1.0 / norm))

    members = _map(member, thickness_list, workers)
    X = _ball_sample(d, gap_radius, n_sample)
    vals = [m.W(X) for m in members]
    gaps = [float(np.max(np.abs(b - a))) for a, b in zip(vals, vals[1:])]
    return LinearizationSequence(Eprime, thickness_list, members, gaps)


def limit_field(seq: LinearizationSequence, grid: GridSpec, gap_threshold: float | None = None) -> GridField:
    """The last member sampled on ``grid``; the last Cauchy gap is attached as the error bar."""
    if len(seq.members) < 3:
        raise ValueError("need at least three members")
    last_gap = seq.gaps[-1]
    cauchy_ok = gap_threshold is None or last_gap <= gap_threshold
    if not cauchy_ok:
        warnings.warn(
            f"sequence not Cauchy at threshold (last gap {last_gap:.3g}); add thinner members", RuntimeWarning
        )
    f = sample_field(grid, seq.members[-1].W)
    f.meta.update({"error_bar": last_gap, "cauchy_ok": cauchy_ok, "thickness": seq.thickness_list[-1]})
    return f


# ---------------------------------------------------------------- expansion


@dataclass
class ExpansionMember:
    n: int
    target: tuple
    E: Ellipsoid | None
    U: PotentialSolution | None
    m: float
    beta: float
    thin_ok: bool
    bounded_ok: bool
    converged: bool
    residual: float

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "target": list(self.target),
            "ellipsoid": self.E.to_json() if self.E else None,
            "m": self.m,
            "beta": self.beta,
            "thin_ok": self.thin_ok,
            "bounded_ok": self.bounded_ok,
            "converged": self.converged,
            "residual": self.residual,
        }


@dataclass
class ExpansionSequence:
    p: NormalizedQuadratic
    R0: float
    norm_radius: float
    members: list

    def field(self, k: int = -1) -> ShiftedSolution:
        """``n (U_n - y^2/2) = p + n V_n`` for member ``k``."""
        mem = self.members[k]
        return ShiftedSolution(mem.U, float(mem.n))

    def to_json(self) -> dict:
        return {
            "a": list(self.p.a),
            "c": self.p.c,
            "R0": self.R0,
            "norm_radius": self.norm_radius,
            "members": [m.to_json() for m in self.members],
        }


def containing_radius(p: NormalizedQuadratic, n_min: int) -> float:
    """Radius of a ball holding ``{P_n - 1/n <= 0}`` for every ``n >= n_min``."""
    return float(np.sqrt(2.0 / min(p.a) + 2.0 / (n_min - 1)))


def build_expansion_sequence(p: NormalizedQuadratic, n_list: Sequence[int], workers: int = 1) -> ExpansionSequence:
    """Inverse-problem ellipsoids for ``P_n = y^2/2 + p/n`` with ``c0 = 1/n``.

    ``m_n`` is the norm of ``U_n - y^2/2`` on ``dB_(2 R0)``, the sphere of
    radius twice the containing radius; rescaling by ``1/(2 R0)`` makes it
    the unit sphere with every ``E_n`` inside ``B_(1/2)``.
    """
    if abs(p.c - 1.0) > 1e-12:
        raise ValueError("expansion sequence needs c = 1")
    if classify_membership(p.polynomial()) is not Membership.MEMBER:
        raise ValueError("polynomial is not in the class P_c")
    n_list = [int(n) for n in n_list]
    if min(n_list) < 2 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing integers > 1")
    R0 = containing_radius(p, n_list[0])
    rho = 2.0 * R0
    d = p.d

    def member(n):
        target = tuple(aj / n for aj in p.a) + (1.0 - 1.0 / n,)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            E, info = solve_inverse_ellipsoid(np.array(target), 1.0 / n, full_output=True)
        U = build_obstacle_solution(E)
        m = boundary_norm(ShiftedSolution(U, 1.0), d, rho)
        return ExpansionMember(
            n,
            target,
            E,
            U,
            m,
            1.0 / (n * m),
            E.semi_axes[-1] <= 2.0 / np.sqrt(n),
            max(E.semi_axes) <= R0,
            info.converged,
            info.residual,
        )

    members = _map(member, n_list, workers)
    return ExpansionSequence(p, R0, rho, members)


@dataclass
class ExpansionLimit:
    u: GridField
    v: GridField
    beta: float
    sup_v: dict
    contact_axes: tuple | None
    member_axes: tuple
    beta_change: float


def expansion_limit(
    seq: ExpansionSequence, grid: GridSpec, radii: Sequence[float] = (2.0, 3.0, 4.0), beta_tol: float = 0.1
) -> ExpansionLimit:
    """Sample ``u = W_n / beta_n`` of the last member and ``v = u - p``; fit the contact ellipse."""
    if len(seq.members) < 2:
        raise ValueError("need at least two members")
    b1, b2 = seq.members[-2].beta, seq.members[-1].beta
    change = abs(b2 - b1) / b1
    if change > beta_tol:
        raise ValueError(f"beta not stabilised (relative change {change:.3g})")
    f = seq.field()
    mem = seq.members[-1]
    n = mem.n
    u = sample_field(grid, f)
    v = GridField(grid, u.values - sample_field(grid, seq.p).values)
    sup_v = {}
    for r in radii:
        q = sphere_quadrature(seq.p.d, r)
        sup_v[float(r)] = float(np.max(np.abs(n * (mem.U._ev.value(q.nodes)))))
    cs = extract_contact_set(u, thin=True)
    axes = tuple(cs.fitted_ellipsoid.semi_axes[:-1]) if cs.fitted_ellipsoid is not None else None
    return ExpansionLimit(u, v, b2, sup_v, axes, tuple(mem.E.semi_axes), change)
