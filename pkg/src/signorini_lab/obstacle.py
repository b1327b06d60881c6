"""Classical obstacle problem ``Delta U = chi_{U > 0}``, ``U >= 0`` as a discrete LCP.

The shared machinery here (unknown layout, projected SOR driver, nested
initial guesses, exact small-instance LCP solve) is reused by the thin
obstacle solver, which differs only in where the projection applies.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from ._kernels import minmap_residual, psor_sweep
from .grid import ArrayFunc, GridField, GridSpec, central_gradient, node_coordinates
from .potential import Ellipsoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Projected SOR settings.

    ``omega`` is a number in ``(1, 2)`` or ``"auto"`` for the Dirichlet-box
    optimum ``2 / (1 + sin(pi h / (2 R)))``.  ``tol`` bounds the min-map
    residual in Laplacian units.
    """

    omega: float | str = 1.9
    tol: float = 1e-9
    max_iters: int = 100000
    check_every: int = 10
    nested: bool = True

    def __post_init__(self):
        if self.omega != "auto":
            if not (1.0 < float(self.omega) < 2.0):
                raise ValueError("omega must lie in (1, 2) or be 'auto'")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.check_every < 1:
            raise ValueError("max_iters and check_every must be positive")

    def omega_for(self, grid: GridSpec, radius: float | None = None) -> float:
        if self.omega != "auto":
            return float(self.omega)
        R = grid.box_radius if radius is None else min(radius, grid.box_radius)
        return float(min(1.99, 2.0 / (1.0 + np.sin(np.pi * grid.spacing / (2.0 * R)))))


@dataclass
class ObstacleProblemSpec:
    """Dirichlet data ``g`` on the box boundary (or outside ``domain_radius``) and constant right-hand side."""

    grid: GridSpec
    boundary_data: ArrayFunc
    rhs: float = 1.0
    domain_radius: float | None = None

    def __post_init__(self):
        if self.domain_radius is not None and self.domain_radius > self.grid.box_radius:
            raise ValueError("domain radius exceeds box")


# ---------------------------------------------------------------- layout


@dataclass
class _Layout:
    grid: GridSpec
    unknown: np.ndarray
    idx: np.ndarray
    zmask: np.ndarray
    strides: np.ndarray


def _radius_squared(grid: GridSpec) -> np.ndarray:
    r2 = np.zeros(grid.shape)
    for k, ax in enumerate(grid.axes()):
        r2 = r2 + (ax**2).reshape([-1 if j == k else 1 for j in range(grid.ndim)])
    return r2


def _layout(grid: GridSpec, domain_radius: float | None) -> _Layout:
    unknown = np.ones(grid.shape, dtype=bool)
    zbits = np.zeros(grid.shape, dtype=np.uint8)
    for k, s in enumerate(grid.symmetry):
        sl = [slice(None)] * grid.ndim
        sl[k] = -1
        unknown[tuple(sl)] = False
        sl[k] = 0
        if s:
            zbits[tuple(sl)] |= np.uint8(1 << k)
        else:
            unknown[tuple(sl)] = False
    if domain_radius is not None:
        unknown &= _radius_squared(grid) < domain_radius**2 * (1.0 - 1e-12)
    idx = np.flatnonzero(unknown).astype(np.int64)
    strides = np.array([s // 8 for s in np.empty(grid.shape).strides], dtype=np.int64)
    return _Layout(grid, unknown, idx, zbits.ravel()[idx], strides)


def _coarser(grid: GridSpec) -> GridSpec | None:
    if grid.n_cells % 4 or grid.n_cells // 2 < 16:
        return None
    return GridSpec(grid.d, grid.box_radius, 2.0 * grid.spacing, grid.symmetry)


def _prolong(values: np.ndarray) -> np.ndarray:
    """Separable linear interpolation from spacing ``2h`` to ``h`` on aligned nodes."""
    v = values
    for k in range(v.ndim):
        n = v.shape[k]
        shape = list(v.shape)
        shape[k] = 2 * n - 1
        out = np.empty(shape)
        ev = [slice(None)] * v.ndim
        od = [slice(None)] * v.ndim
        ev[k] = slice(0, None, 2)
        od[k] = slice(1, None, 2)
        out[tuple(ev)] = v
        lo = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        out[tuple(od)] = 0.5 * (v[tuple(lo)] + v[tuple(hi)])
        v = out
    return v


def _sample_at(grid: GridSpec, func: ArrayFunc, mask: np.ndarray, out: np.ndarray, slab: int = 16):
    """Fill ``out[mask]`` with ``func`` at those nodes, slab by slab."""
    for start in range(0, grid.shape[0], slab):
        sl = slice(start, min(start + slab, grid.shape[0]))
        m = mask[sl]
        if not np.any(m):
            continue
        pts = node_coordinates(grid, sl)[m]
        block = out[sl]
        block[m] = np.asarray(func(pts), dtype=float)
        out[sl] = block


# ---------------------------------------------------------------- driver


@dataclass
class _Problem:
    grid: GridSpec
    boundary: ArrayFunc
    lower: Callable[[GridSpec, _Layout], np.ndarray]
    rhs: float
    domain_radius: float | None


def _initial(problem: _Problem, lay: _Layout, cfg: SolverConfig, stats: list) -> np.ndarray:
    grid = problem.grid
    coarse = _coarser(grid) if cfg.nested else None
    u = np.zeros(grid.shape)
    if coarse is None:
        _sample_at(grid, problem.boundary, np.ones(grid.shape, dtype=bool), u)
        return u
    sub = _Problem(coarse, problem.boundary, problem.lower, problem.rhs, problem.domain_radius)
    uc = _drive(sub, cfg, stats)
    u = _prolong(uc)
    _sample_at(grid, problem.boundary, ~lay.unknown, u)
    return u


def _drive(problem: _Problem, cfg: SolverConfig, stats: list) -> np.ndarray:
    grid = problem.grid
    lay = _layout(grid, problem.domain_radius)
    lower = problem.lower(grid, lay)
    u = _initial(problem, lay, cfg, stats)
    flat = u.ravel()
    flat[lay.idx] = np.maximum(flat[lay.idx], lower)
    h2 = grid.spacing**2
    rhs = problem.rhs * h2
    omega = cfg.omega_for(grid, problem.domain_radius)
    scale = 2.0 * grid.ndim / h2
    it = 0
    res = np.inf
    while it < cfg.max_iters:
        n = min(cfg.check_every, cfg.max_iters - it)
        for _ in range(n):
            psor_sweep(flat, lay.idx, lay.zmask, lower, lay.strides, rhs, omega)
        it += n
        res = scale * minmap_residual(flat, lay.idx, lay.zmask, lower, lay.strides, rhs)
        if res <= cfg.tol:
            break
    stats.append({"spacing": grid.spacing, "iterations": it, "residual": float(res), "omega": omega})
    log.debug("level h=%g: %d sweeps, residual %.3g", grid.spacing, it, res)
    return flat.reshape(grid.shape)


def run_projected_sor(problem: _Problem, cfg: SolverConfig) -> GridField:
    stats: list = []
    u = _drive(problem, cfg, stats)
    final = stats[-1]
    converged = final["residual"] <= cfg.tol
    if not converged:
        warnings.warn(
            f"projected SOR stopped after {final['iterations']} sweeps (residual {final['residual']:.3g})",
            RuntimeWarning,
        )
    meta = {
        "converged": bool(converged),
        "iterations": final["iterations"],
        "residual": final["residual"],
        "omega": final["omega"],
        "levels": stats,
    }
    return GridField(problem.grid, u, meta)


def _obstacle_lower(grid: GridSpec, lay: _Layout) -> np.ndarray:
    return np.zeros(len(lay.idx))


def solve_obstacle(spec: ObstacleProblemSpec, cfg: SolverConfig = SolverConfig()) -> GridField:
    """Projected SOR for ``U >= 0``, ``Delta_h U <= rhs``, ``U (rhs - Delta_h U) = 0``."""
    problem = _Problem(spec.grid, spec.boundary_data, _obstacle_lower, spec.rhs, spec.domain_radius)
    return run_projected_sor(problem, cfg)


# ---------------------------------------------------------------- exact LCP


def _assemble(lay: _Layout, u_fixed: np.ndarray, rhs_h2: float):
    """``A u = b`` equivalent to ``u = gs(u)`` scaled by the stencil diagonal."""
    grid = lay.grid
    n = grid.ndim
    pos = -np.ones(u_fixed.size, dtype=np.int64)
    pos[lay.idx] = np.arange(len(lay.idx))
    flat = u_fixed.ravel()
    rows, cols, vals = [], [], []
    b = np.full(len(lay.idx), -rhs_h2)
    for t, f in enumerate(lay.idx):
        rows.append(t)
        cols.append(t)
        vals.append(2.0 * n)
        m = lay.zmask[t]
        for k in range(n):
            st = lay.strides[k]
            nbrs = [(f + st, 2.0)] if m & (1 << k) else [(f + st, 1.0), (f - st, 1.0)]
            for g, c in nbrs:
                if pos[g] >= 0:
                    rows.append(t)
                    cols.append(pos[g])
                    vals.append(-c)
                else:
                    b[t] += c * flat[g]
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(lay.idx),) * 2)
    return A, b


def _solve_with_active(A, b, lower, active):
    u = np.where(active, lower, 0.0)
    free = ~active
    if np.any(free):
        Aff = A[free][:, free]
        rhs = b[free] - A[free][:, active] @ lower[active]
        u[free] = spsolve(Aff.tocsc(), rhs) if Aff.shape[0] > 1 else rhs / Aff.toarray()[0, 0]
    return u


def solve_lcp(A, b, lower, max_iter: int = 200):
    """Exact solution of ``u >= lower, Au - b >= 0, (u - lower)(Au - b) = 0``.

    Entries with ``lower = -inf`` are unconstrained.  Up to 16 constrained
    unknowns every active set is tried; beyond that a primal-dual active
    set iteration is run with exact solves.  Either way the result is
    checked for complementarity.
    """
    A = sparse.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float)
    constrained = np.isfinite(lower)
    cidx = np.flatnonzero(constrained)
    low = np.where(constrained, lower, 0.0)
    scale = max(1.0, float(np.max(np.abs(b))))
    tol = 1e-11 * scale

    def ok(u):
        w = A @ u - b
        return (
            np.all(u[constrained] - low[constrained] >= -tol)
            and np.all(w[constrained] >= -tol)
            and np.all(np.abs(w[~constrained]) <= tol)
        )

    if len(cidx) <= 16:
        for bits in itertools.product([False, True], repeat=len(cidx)):
            active = np.zeros(len(b), dtype=bool)
            active[cidx[np.array(bits, dtype=bool)]] = True
            u = _solve_with_active(A, b, low, active)
            if ok(u):
                return u
        raise RuntimeError("no complementary solution found")
    active = np.zeros(len(b), dtype=bool)
    seen = set()
    for _ in range(max_iter):
        u = _solve_with_active(A, b, low, active)
        w = A @ u - b
        new = constrained & (w > u - low)
        key = new.tobytes()
        if np.array_equal(new, active) or key in seen:
            break
        seen.add(key)
        active = new
    if not ok(u):
        raise RuntimeError("active-set iteration did not reach a complementary solution")
    return u


def lcp_oracle(spec: ObstacleProblemSpec, lower: float | np.ndarray = 0.0) -> GridField:
    """Exact discrete solution for small grids (at most 200 unknowns)."""
    lay = _layout(spec.grid, spec.domain_radius)
    if len(lay.idx) > 200:
        raise ValueError(f"{len(lay.idx)} unknowns exceed the oracle limit of 200")
    u = np.zeros(spec.grid.shape)
    _sample_at(spec.grid, spec.boundary_data, ~lay.unknown, u)
    A, b = _assemble(lay, u, spec.rhs * spec.grid.spacing**2)
    low = np.broadcast_to(np.asarray(lower, dtype=float), (len(lay.idx),)).copy()
    z = solve_lcp(A, b, low)
    flat = u.ravel()
    flat[lay.idx] = z
    return GridField(spec.grid, flat.reshape(spec.grid.shape), {"unknowns": len(lay.idx)})


# ---------------------------------------------------------------- contact sets


@dataclass
class ContactSet:
    """Nodes where the field is deemed zero, with an axis-aligned ellipsoid fit.

    ``cells`` is a boolean mask over the stored nodes (the ``y = 0`` plane
    only when ``thin``).  Distances are in units of the grid spacing.
    """

    spec: GridSpec
    cells: np.ndarray
    thin: bool
    fitted_ellipsoid: Ellipsoid | None = None
    hausdorff_to_fit: float = float("nan")
    symmetric_difference: int = 0
    threshold: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not bool(np.any(self.cells))

    @property
    def plane_cells(self) -> np.ndarray:
        if self.thin:
            return self.cells
        return np.take(self.cells, self.spec.origin_index(self.spec.ndim - 1), axis=-1)

    def count(self) -> int:
        return int(np.sum(self.cells))


def _full_bool(mask: np.ndarray, symmetry) -> np.ndarray:
    v = mask
    for k, s in enumerate(symmetry):
        if s:
            v = np.concatenate([np.flip(np.take(v, np.arange(1, v.shape[k]), axis=k), axis=k), v], axis=k)
    return v


def _boundary_of(mask: np.ndarray) -> np.ndarray:
    pad = np.pad(mask, 1, constant_values=False)
    inner = tuple(slice(1, -1) for _ in range(mask.ndim))
    edge = np.zeros_like(mask)
    for k in range(mask.ndim):
        for sh in (-1, 1):
            edge |= ~np.roll(pad, sh, axis=k)[inner]
    return mask & edge


def fit_axis_ellipsoid(points: np.ndarray) -> np.ndarray | None:
    """Least-squares semi-axes for ``sum X_j^2 / l_j^2 = 1`` through the given points."""
    if len(points) < points.shape[1]:
        return None
    w, *_ = np.linalg.lstsq(points**2, np.ones(len(points)), rcond=None)
    if np.any(w <= 0):
        return None
    return 1.0 / np.sqrt(w)


def _ellipsoid_surface(axes: np.ndarray, n: int = 256) -> np.ndarray:
    if len(axes) == 2:
        t = 2 * np.pi * np.arange(4 * n) / (4 * n)
        return np.stack([axes[0] * np.cos(t), axes[1] * np.sin(t)], axis=-1)
    from .grid import _unit_sphere_rule

    dirs, _ = _unit_sphere_rule(len(axes) - 1, 64, 128)
    return dirs * axes


def extract_contact_set(
    U: GridField,
    c: float = 5.0,
    thin: bool = False,
    refine: bool | None = None,
) -> ContactSet:
    """Mark nodes with ``U <= c h^2`` and fit an axis-aligned ellipsoid.

    With ``refine`` (default for the classical problem) the fit uses the
    band nodes moved inward by ``2U grad U / |grad U|^2``: near the free
    boundary ``U`` grows like half the squared distance, so this lands on
    the free boundary to second order.  Otherwise the fit uses the
    boundary nodes of the marked set.
    """
    spec = U.spec
    h = spec.spacing
    thr = c * h * h
    refine = (not thin) if refine is None else refine
    if thin:
        vals = U.plane()
        plane_spec_axes = spec.axes()[:-1]
        sym = spec.symmetry[:-1]
    else:
        vals = U.values
        plane_spec_axes = spec.axes()
        sym = spec.symmetry
    mask = vals <= thr
    out = ContactSet(spec, mask, thin, threshold=thr)
    if not np.any(mask):
        return out
    full = _full_bool(mask, sym)
    full_axes = [np.concatenate([-ax[:0:-1], ax]) if s else ax for ax, s in zip(plane_spec_axes, sym)]
    mesh = np.stack(np.meshgrid(*full_axes, indexing="ij"), axis=-1)
    edge = _boundary_of(full)
    edge_pts = mesh[edge]
    if refine:
        g = central_gradient(U)
        band = (U.values > 0) & mask & np.all(np.isfinite(g), axis=-1)
        X = node_coordinates(spec)[band]
        G = g[band]
        G2 = np.sum(G**2, axis=-1)
        keep = G2 > 0
        fit_pts = X[keep] - (2.0 * U.values[band][keep] / G2[keep])[:, None] * G[keep]
        # restore the reflected copies so the fit sees a symmetric cloud
        for k, s in enumerate(spec.symmetry):
            if s:
                mir = fit_pts.copy()
                mir[:, k] *= -1
                fit_pts = np.concatenate([fit_pts, mir])
    else:
        fit_pts = edge_pts
    axes = fit_axis_ellipsoid(fit_pts)
    if axes is None:
        return out
    if thin:
        E = Ellipsoid(spec.d, tuple(axes) + (0.0,))
    else:
        E = Ellipsoid(spec.d, tuple(axes))
    surf = _ellipsoid_surface(axes)
    d1 = cKDTree(edge_pts).query(surf)[0].max()
    d2 = cKDTree(surf).query(edge_pts)[0].max()
    inside = np.sum(mesh**2 / axes**2, axis=-1) <= 1.0
    out.fitted_ellipsoid = E
    out.hausdorff_to_fit = float(max(d1, d2) / h)
    out.symmetric_difference = int(np.sum(inside ^ full))
    out.extra = {"fit_points": int(len(fit_pts))}
    return out


def convexity_defect(U: GridField) -> float:
    """Minimum over interior nodes of the smallest eigenvalue of the central-difference Hessian."""
    v = U.full()
    h = U.spec.spacing
    n = v.ndim
    inner = tuple(slice(1, -1) for _ in range(n))
    H = np.empty(tuple(s - 2 for s in v.shape) + (n, n))

    def shifted(offs):
        return v[tuple(slice(1 + o, v.shape[k] - 1 + o) for k, o in enumerate(offs))]

    for i in range(n):
        e = [0] * n
        e[i] = 1
        f = [0] * n
        f[i] = -1
        H[..., i, i] = (shifted(e) - 2.0 * v[inner] + shifted(f)) / h**2
        for j in range(i + 1, n):
            pp = [0] * n
            pm = [0] * n
            mp = [0] * n
            mm = [0] * n
            pp[i], pp[j] = 1, 1
            pm[i], pm[j] = 1, -1
            mp[i], mp[j] = -1, 1
            mm[i], mm[j] = -1, -1
            H[..., i, j] = (shifted(pp) - shifted(pm) - shifted(mp) + shifted(mm)) / (4.0 * h**2)
            H[..., j, i] = H[..., i, j]
    return float(np.min(np.linalg.eigvalsh(H.reshape(-1, n, n))))
