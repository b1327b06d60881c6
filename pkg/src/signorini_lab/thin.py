"""Thin obstacle (Signorini) solver and the exhaustion construction of global solutions.

Grids for the thin problem are always even in ``y`` and only ``y >= 0`` is
stored.  On the plane ``{y = 0}`` the stencil is reflected and the update is
projected onto ``u >= psi``; above the plane the update is plain SOR for
``Delta u = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .grid import (
    ArrayFunc,
    GridField,
    GridSpec,
    discrete_laplacian,
    interpolate,
    node_coordinates,
    one_sided_dy,
    restrict,
    sphere_area,
    sphere_integral,
    sphere_quadrature,
)
from .harmonic import Membership, NormalizedQuadratic, classify_membership
from .obstacle import (
    SolverConfig,
    _Layout,
    _Problem,
    _assemble,
    _layout,
    _sample_at,
    extract_contact_set,
    run_projected_sor,
    solve_lcp,
)

log = logging.getLogger(__name__)


@dataclass
class ThinProblemSpec:
    """Dirichlet data on the box boundary (or outside ``domain_radius``) and a thin obstacle on ``{y = 0}``."""

    grid: GridSpec
    boundary_data: ArrayFunc
    thin_obstacle: ArrayFunc | None = None
    domain_radius: float | None = None

    def __post_init__(self):
        if not self.grid.symmetry[-1]:
            raise ValueError("thin problems need the even-in-y symmetry flag")
        if self.domain_radius is not None and self.domain_radius > self.grid.box_radius:
            raise ValueError("domain radius exceeds box")


def _thin_lower(psi: ArrayFunc | None):
    def lower(grid: GridSpec, lay: _Layout) -> np.ndarray:
        low = np.full(len(lay.idx), -np.inf)
        on_plane = (lay.zmask & np.uint8(1 << (grid.ndim - 1))) != 0
        if psi is None:
            low[on_plane] = 0.0
        elif np.any(on_plane):
            sub = np.unravel_index(lay.idx[on_plane], grid.shape)
            pts = np.stack([grid.axis(k)[sub[k]] for k in range(grid.ndim)], axis=-1)
            vals = np.asarray(psi(pts), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError("thin obstacle must be finite")
            low[on_plane] = vals
        return low

    return lower


def solve_thin(spec: ThinProblemSpec, cfg: SolverConfig = SolverConfig()) -> GridField:
    problem = _Problem(spec.grid, spec.boundary_data, _thin_lower(spec.thin_obstacle), 0.0, spec.domain_radius)
    out = run_projected_sor(problem, cfg)
    out.meta["problem"] = "thin"
    return out


def thin_lcp_oracle(spec: ThinProblemSpec) -> GridField:
    """Exact discrete thin solution for small grids (at most 200 unknowns)."""
    lay = _layout(spec.grid, spec.domain_radius)
    if len(lay.idx) > 200:
        raise ValueError(f"{len(lay.idx)} unknowns exceed the oracle limit of 200")
    u = np.zeros(spec.grid.shape)
    _sample_at(spec.grid, spec.boundary_data, ~lay.unknown, u)
    A, b = _assemble(lay, u, 0.0)
    z = solve_lcp(A, b, _thin_lower(spec.thin_obstacle)(spec.grid, lay))
    flat = u.ravel()
    flat[lay.idx] = z
    return GridField(spec.grid, flat.reshape(spec.grid.shape), {"unknowns": len(lay.idx)})


def signorini_defects(u: GridField, psi: ArrayFunc | None = None, domain_radius: float | None = None) -> dict:
    """Nodewise checks of the discrete Signorini conditions on a solved field."""
    spec = u.spec
    lap = discrete_laplacian(u).values
    pts = node_coordinates(spec)
    if domain_radius is not None:
        lap = np.where(np.sum(pts**2, axis=-1) < domain_radius**2 * (1 - 1e-12), lap, np.nan)
    plane = u.plane()
    if psi is None:
        psi_v = np.zeros_like(plane)
    else:
        psi_v = np.asarray(psi(pts[..., 0, :].reshape(-1, spec.ndim)), dtype=float).reshape(plane.shape)
    gap = plane - psi_v
    dy = one_sided_dy(u)
    lap_plane = lap[..., 0]
    ok = np.isfinite(lap_plane)
    off = lap[..., 1:]
    off = off[np.isfinite(off)]
    scale = max(1.0, float(np.max(np.abs(u.values))))
    contact = ok & (gap <= 1e-12 * scale)
    return {
        "min_gap": float(np.min(gap[ok])) if np.any(ok) else 0.0,
        "max_gap_times_dy": float(np.max(gap[ok] * dy[ok])) if np.any(ok) else 0.0,
        "max_dy_on_contact": float(np.max(dy[contact])) if np.any(contact) else -np.inf,
        "max_abs_laplacian_off_plane": float(np.max(np.abs(off))) if off.size else 0.0,
        "max_laplacian_plane": float(np.max(lap_plane[ok])) if np.any(ok) else 0.0,
        "contact_nodes": int(np.sum(contact)),
    }


# ---------------------------------------------------------------- exhaustion


@dataclass
class BarrierCertificate:
    """``max (u_R - p - Psi_R)`` over grid nodes of ``B_R minus B_1``.

    ``worst_points`` keeps the nodes with the largest values for audit.
    """

    m: float
    R: float
    max_violation: float
    n_points: int
    worst_points: list = field(default_factory=list)
    worst_values: list = field(default_factory=list)

    def barrier(self, X: np.ndarray, d: int) -> np.ndarray:
        r = np.sqrt(np.sum(X**2, axis=-1))
        return self.m / (1.0 - self.R ** (1 - d)) * (r ** (1 - d) - self.R ** (1 - d))

    def to_json(self) -> dict:
        return asdict(self)


def rescale_quadratic(p: NormalizedQuadratic) -> tuple[NormalizedQuadratic, float]:
    """``p_t(X) = p(tX) / t^2`` with ``t`` chosen so ``{p_t(., 0) <= 0}`` is the unit-ball scale."""
    t = p.sublevel_radius()
    return NormalizedQuadratic(p.a, p.c / (t * t)), t


def _certify(u: GridField, p: NormalizedQuadratic, m: float, R: float, keep: int = 16) -> BarrierCertificate:
    spec = u.spec
    d = spec.d
    cert = BarrierCertificate(m, R, -np.inf, 0)
    worst: list[tuple[float, tuple]] = []
    for start in range(0, spec.shape[0], 16):
        sl = slice(start, min(start + 16, spec.shape[0]))
        X = node_coordinates(spec, sl)
        r = np.sqrt(np.sum(X**2, axis=-1))
        sel = (r >= 1.0) & (r <= R)
        if not np.any(sel):
            continue
        Xs = X[sel]
        viol = u.values[sl][sel] - p(Xs) - cert.barrier(Xs, d)
        cert.n_points += int(sel.sum())
        top = np.argsort(viol)[-keep:]
        worst.extend((float(viol[i]), tuple(float(c) for c in Xs[i])) for i in top)
        cert.max_violation = max(cert.max_violation, float(viol.max()))
    worst.sort(reverse=True)
    cert.worst_values = [w[0] for w in worst[:keep]]
    cert.worst_points = [list(w[1]) for w in worst[:keep]]
    return cert


def _spherical_means(f, g: ArrayFunc, d: int, radii: Sequence[float]) -> np.ndarray:
    out = []
    for r in radii:
        q = sphere_quadrature(d, r)
        out.append(sphere_integral(lambda X: interpolate(f, X) - g(X), q) / sphere_area(d, r))
    return np.array(out)


def _loglog_slope(r: np.ndarray, v: np.ndarray) -> float:
    ok = v > 0
    if ok.sum() < 2 or np.ptp(r[ok]) == 0:
        return float("nan")
    return float(np.polyfit(np.log(r[ok]), np.log(v[ok]), 1)[0])


def construct_global_from_polynomial(
    p: NormalizedQuadratic,
    R_list: Sequence[float],
    cfg: SolverConfig | None = None,
    h: float = 1.0 / 32,
    n_decay: int = 7,
):
    """Solve on balls ``B_R`` with data ``p`` and certify the barrier and the decay of ``u - p``.

    All lengths (``R_list``, ``h``, the returned field) refer to the rescaled
    polynomial ``p_t(X) = p(tX) / t^2`` whose zero sublevel set on the plane
    is the closed unit disc; ``t`` is reported.

    Returns ``(field at max R, certificates, decay report)``.
    """
    if classify_membership(p.polynomial()) is not Membership.MEMBER:
        raise ValueError("polynomial is not in the class P_c (sublevel set empty or not compact)")
    R_list = [float(R) for R in R_list]
    if len(R_list) < 2 or any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must hold at least two increasing radii")
    if R_list[0] <= 2.0:
        raise ValueError("radii must exceed 2")
    cfg = cfg or SolverConfig(omega="auto", tol=1e-7)
    pt, t = rescale_quadratic(p)
    d = pt.d
    sym = (True,) * (d + 1)
    fields: list[GridField] = []
    certs: list[BarrierCertificate] = []
    m = None
    for R in R_list:
        grid = GridSpec(d, R, h, sym)
        u = solve_thin(ThinProblemSpec(grid, pt, domain_radius=R), cfg)
        if m is None:
            plane_pts = node_coordinates(grid)[..., 0, :].reshape(-1, d + 1)
            m = max(0.0, -float(np.min(pt(plane_pts))))
        certs.append(_certify(u, pt, m, R))
        log.info("R=%g: %d sweeps, barrier violation %.3g", R, u.meta["iterations"], certs[-1].max_violation)
        fields.append(u)
        if len(fields) > 2:
            fields[-3] = restrict(fields[-3], R_list[0])
    small = R_list[0] / 2.0
    cauchy = []
    for k in range(len(fields) - 1):
        a = restrict(fields[k], small)
        b = restrict(fields[k + 1], small)
        X = node_coordinates(a.spec)
        inside = np.sum(X**2, axis=-1) <= small**2
        cauchy.append(float(np.max(np.abs(a.values - b.values)[inside])))
    # u_R - p ~ A(X) (|X|^(1-d) - R^(1-d)): remove the R^(1-d) bias using the two largest radii
    R1, R2 = R_list[-2], R_list[-1]
    u1 = restrict(fields[-2], R1)
    u2 = restrict(fields[-1], R1)
    w = R2 ** (1 - d) / (R1 ** (1 - d) - R2 ** (1 - d))
    uinf = GridField(u1.spec, u2.values + w * (u2.values - u1.values))
    radii = np.geomspace(2.0, R_list[-1] / 2.0, n_decay)
    means = _spherical_means(uinf, pt, d, radii)
    raw = _spherical_means(fields[-1], pt, d, radii)
    slope = _loglog_slope(radii, means)
    raw_slope = _loglog_slope(radii, raw)
    contact = extract_contact_set(fields[-1], thin=True)
    plane = node_coordinates(fields[-1].spec)[..., 0, :]
    # exact discrete contact: nodes held on the obstacle by the projection
    exact = (fields[-1].plane() <= 0.0) & (np.sum(plane**2, axis=-1) < R_list[-1] ** 2)
    inside_sub = bool(np.all(pt(plane[exact]) <= 1e-12))
    report = {
        "scale": t,
        "m": m,
        "radii": radii.tolist(),
        "spherical_mean_extrapolated": means.tolist(),
        "spherical_mean_raw": raw.tolist(),
        "slope": slope,
        "raw_slope": raw_slope,
        "target_slope": 1.0 - d,
        "cauchy": cauchy,
        "contact_in_sublevel_set": inside_sub,
        "contact_nodes": contact.count(),
        "exact_contact_nodes": int(exact.sum()),
        "iterations": [f.meta.get("iterations") for f in fields[-2:]],
        "converged": all(f.meta.get("converged", True) for f in fields[-2:]),
    }
    out = fields[-1]
    out.meta.update({"scale": t, "extrapolated": uinf})
    return out, certs, report


# ---------------------------------------------------------------- nondegeneracy


@dataclass
class NondegeneracyResult:
    applicable: bool
    holds: bool
    required_radius: float
    checked_radius: float
    precondition_margin: float
    vacuous: bool = False
    missing_nodes: int = 0

    def __bool__(self) -> bool:
        return self.applicable and self.holds


def nondegeneracy_check(
    U,
    a: Sequence[float],
    eps: float,
    delta: float,
    R: float,
    h: float | None = None,
    c: float = 5.0,
) -> NondegeneracyResult:
    """Check that the contact set contains the plane disc of radius ``eps/(delta R) - h``.

    Applicable only when ``U <= P - eps`` on ``dB_R`` with
    ``P = y^2/2 + delta/2 (sum a_j x_j^2 - y^2)``, verified on a sphere rule.
    ``U`` is a grid field or an analytic callable (then ``h`` is required).
    """
    a = np.asarray(a, dtype=float)
    d = len(a)

    def P(X):
        y2 = X[..., -1] ** 2
        return 0.5 * y2 + 0.5 * delta * (np.sum(a * X[..., :-1] ** 2, axis=-1) - y2)

    if isinstance(U, GridField):
        h = U.spec.spacing
        limit = U.spec.box_radius - h
        evaluate = lambda X: interpolate(U, X)
    else:
        if h is None:
            raise ValueError("h is required for analytic fields")
        limit = np.inf
        evaluate = U
    q = sphere_quadrature(d, R, 48, 96)
    if R > limit:
        return NondegeneracyResult(False, False, np.nan, np.nan, np.nan)
    margin = float(np.min(P(q.nodes) - eps - evaluate(q.nodes)))
    required = eps / (delta * R) - h
    if margin < 0 or eps <= 0:
        return NondegeneracyResult(False, False, required, np.nan, margin)
    if isinstance(U, GridField):
        radius = min(required, U.spec.box_radius - h)
        contact = extract_contact_set(U, c=c, thin=True)
        pts = node_coordinates(U.spec)[..., 0, :-1]
        cells = contact.cells
        thr = contact.threshold
    else:
        radius = min(required, 1e6 * h)
        n = int(np.ceil(max(radius, 0.0) / h)) + 1
        ax = h * np.arange(-n, n + 1)
        mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
        pts = mesh
        X = np.concatenate([mesh.reshape(-1, d), np.zeros((mesh[..., 0].size, 1))], axis=1)
        thr = c * h * h
        cells = (np.asarray(evaluate(X)) <= thr).reshape(mesh.shape[:-1])
    vacuous = radius < required or radius <= 0
    disc = np.sum(pts**2, axis=-1) <= max(radius, 0.0) ** 2
    missing = int(np.sum(disc & ~cells))
    return NondegeneracyResult(True, missing == 0, required, radius, margin, vacuous, missing)


# ---------------------------------------------------------------- uniqueness


@dataclass
class UniquenessReport:
    scale: float
    median_ratio: float
    max_deviation: float
    nodes: int
    threshold: float
    cross_check: float
    iterations: tuple
    converged: bool = True

    def to_json(self) -> dict:
        return asdict(self)


def uniqueness_experiment(
    Eprime,
    s: float,
    thickness_list: Sequence[float] | None = None,
    h: float = 1.0 / 32,
    box_radius: float = 1.0,
    cfg: SolverConfig | None = None,
) -> UniquenessReport:
    """Solve the thin problem with data ``W`` and ``s W`` (``W`` the linearization limit) and compare."""
    from .linearization import build_theorem1_sequence

    if not s > 0:
        raise ValueError("scale must be positive (negative multiples leave the solution class)")
    if not Eprime.thin:
        raise ValueError("need a thin ellipsoid")
    axes = np.asarray(Eprime.semi_axes[:-1])
    if axes.max() >= 0.5:
        raise ValueError("rescale required: contact semi-axes must be < 1/2")
    if thickness_list is None:
        thickness_list = [0.2 * 0.5**k for k in range(6)]
    seq = build_theorem1_sequence(Eprime, thickness_list)
    W = seq.members[-1].W
    cfg = cfg or SolverConfig(omega="auto", tol=1e-10)
    grid = GridSpec(Eprime.d, box_radius, h, (True,) * (Eprime.d + 1))
    u1 = solve_thin(ThinProblemSpec(grid, W), cfg)
    sW = lambda X: s * W(X)
    u2 = u1 if s == 1.0 else solve_thin(ThinProblemSpec(grid, sW), cfg)
    thr = 0.1 * float(np.max(u1.values))
    sel = u1.values >= thr
    if not np.any(sel) or thr <= 0:
        raise ValueError("degenerate first solution: nothing above the threshold")
    ratio = u2.values[sel] / u1.values[sel]
    med = float(np.median(ratio))
    dev = float(np.max(np.abs(ratio - med)) / med)
    inner = restrict(u1, 0.5)
    X = node_coordinates(inner.spec)
    cross = float(np.max(np.abs(inner.values - W(X.reshape(-1, grid.ndim)).reshape(inner.values.shape))))
    return UniquenessReport(
        s,
        med,
        dev,
        int(sel.sum()),
        thr,
        cross,
        (u1.meta["iterations"], u2.meta["iterations"]),
        bool(u1.meta["converged"] and u2.meta["converged"]),
    )
