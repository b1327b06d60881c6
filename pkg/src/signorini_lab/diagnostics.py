"""Monotonicity and growth functionals on spheres and balls.

Every functional accepts either an analytic field (a vectorised callable,
optionally with ``gradient`` and ``breaks`` methods) or a :class:`GridField`.
Analytic fields are integrated directly with no grid involved; grid curves
carry an error bar from repeating the computation on every other node.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import (
    GridField,
    ball_field_integral,
    ball_gradient_energy,
    ball_integral,
    coarsened,
    interpolate,
    one_sided_dy,
    discrete_laplacian,
    sphere_integral,
    sphere_quadrature,
)

NONDECREASING = {"frequency": True, "weiss": True, "boundary_mass": True, "height": False, "decay": False}


@dataclass
class DiagnosticCurve:
    quantity: str
    r: np.ndarray
    values: np.ndarray
    monotone_defect: float
    fitted_exponent: float | None = None
    error_bar: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.r) <= 0):
            raise ValueError("radii must be strictly increasing")

    def defects(self) -> np.ndarray:
        """Per-sample drop against the claimed direction (first entry 0)."""
        v = self.values if NONDECREASING.get(self.quantity, True) else -self.values
        return np.concatenate([[0.0], v[:-1] - v[1:]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "value", "defect"])
        for r, v, dft in zip(self.r, self.values, self.defects()):
            w.writerow([repr(float(r)), repr(float(v)), repr(float(dft))])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv())
        return path

    def summary(self) -> dict:
        return {
            "quantity": self.quantity,
            "r": self.r.tolist(),
            "values": self.values.tolist(),
            "monotone_defect": self.monotone_defect,
            "fitted_exponent": self.fitted_exponent,
            "error_bar": None if self.error_bar is None else np.asarray(self.error_bar).tolist(),
        }


def _defect(values: np.ndarray, increasing: bool = True) -> float:
    if len(values) < 2:
        return 0.0
    v = values if increasing else -values
    return float(np.max(v[:-1] - v[1:]))


def _dim(f, d: int | None) -> int:
    if isinstance(f, GridField):
        return f.spec.d
    if d is not None:
        return d
    if hasattr(f, "d"):
        return int(f.d)
    raise ValueError("dimension d required for this callable")


def _grad(f: Callable, X: np.ndarray, step: float = 1e-6) -> np.ndarray:
    if hasattr(f, "gradient"):
        return np.asarray(f.gradient(X), dtype=float)
    g = np.empty_like(X)
    for k in range(X.shape[-1]):
        e = np.zeros(X.shape[-1])
        e[k] = step
        g[..., k] = (f(X + e) - f(X - e)) / (2 * step)
    return g


@dataclass
class _Integrals:
    """Sphere and ball integrals of one field, analytic or sampled."""

    f: object
    d: int
    n_radial: int = 32
    n_polar: int = 48
    n_azimuth: int = 96

    @property
    def grid(self) -> bool:
        return isinstance(self.f, GridField)

    def sphere(self, g: Callable[[np.ndarray], np.ndarray], r: float) -> float:
        """``int_{dB_r} g(u)`` for a pointwise function ``g`` of the field value."""
        q = sphere_quadrature(self.d, r, self.n_polar, self.n_azimuth)
        if self.grid:
            from .grid import _check_inside

            _check_inside(self.f.spec, r, "sphere")
            vals = interpolate(self.f, q.nodes)
        else:
            vals = np.asarray(self.f(q.nodes), dtype=float)
        return float(np.dot(q.weights, g(vals)))

    def energy(self, r: float) -> float:
        if self.grid:
            return ball_gradient_energy(self.f, r)
        breaks = getattr(self.f, "breaks", None)
        return ball_integral(
            lambda X: np.sum(_grad(self.f, X) ** 2, axis=-1),
            self.d, r, self.n_radial, self.n_polar, self.n_azimuth, breaks,
        )

    def volume(self, r: float) -> float:
        if self.grid:
            return ball_field_integral(self.f, r)
        breaks = getattr(self.f, "breaks", None)
        return ball_integral(self.f, self.d, r, self.n_radial, self.n_polar, self.n_azimuth, breaks)


def _curve(f, compute, quantity: str, r_list, d=None, **kw) -> DiagnosticCurve:
    d = _dim(f, d)
    r = np.asarray(r_list, dtype=float)
    vals = np.array([compute(_Integrals(f, d, **kw), ri) for ri in r])
    bar = None
    if isinstance(f, GridField):
        c = coarsened(f)
        if c is not None:
            coarse = np.array([compute(_Integrals(c, d, **kw), ri) for ri in r])
            bar = np.abs(vals - coarse)
    return DiagnosticCurve(quantity, r, vals, _defect(vals, NONDECREASING[quantity]), error_bar=bar)


def _frequency(I: _Integrals, r: float) -> float:
    H = I.sphere(np.square, r)
    D = I.energy(r)
    scale = max(abs(D) * r, 1e-300)
    if H < 1e-14 * scale or H <= 0:
        raise ValueError(f"vanishing denominator at r={r:g}")
    return r * D / H


def almgren(u, r_list: Sequence[float], d: int | None = None, **kw) -> DiagnosticCurve:
    """``Phi(u; r) = r int_{B_r} |grad u|^2 / int_{dB_r} u^2``."""
    return _curve(u, _frequency, "frequency", r_list, d, **kw)


def _weiss(I: _Integrals, r: float) -> float:
    d = I.d
    bulk = I.energy(r) + 2.0 * I.volume(r)
    return r ** (-(d + 3)) * bulk - 2.0 * r ** (-(d + 4)) * I.sphere(np.square, r)


class _HalfYSquared:
    def __init__(self, d: int):
        self.d = d

    def __call__(self, X):
        return 0.5 * np.asarray(X)[..., -1] ** 2

    def gradient(self, X):
        g = np.zeros_like(np.asarray(X, dtype=float))
        g[..., -1] = np.asarray(X)[..., -1]
        return g


@lru_cache(maxsize=None)
def alpha(d: int) -> float:
    """Weiss energy of ``y^2/2`` at ``r = 1``, computed with the same quadrature."""
    return _weiss(_Integrals(_HalfYSquared(d), d), 1.0)


def weiss(U, r_list: Sequence[float], d: int | None = None, **kw) -> DiagnosticCurve:
    """``W(U; r) = r^-(d+3) int_{B_r}(|grad U|^2 + 2U) - 2 r^-(d+4) int_{dB_r} U^2``."""
    c = _curve(U, _weiss, "weiss", r_list, d, **kw)
    a = alpha(_dim(U, d))
    c.extra.update({"alpha": a, "gap_to_alpha": float(c.values[-1] - a)})
    return c


def boundary_mass(u, r_list: Sequence[float], d: int | None = None, **kw) -> DiagnosticCurve:
    return _curve(u, lambda I, r: I.sphere(np.square, r), "boundary_mass", r_list, d, **kw)


def frequency_at_infinity(u, r_max: float, d: int | None = None) -> float:
    """Frequency at the largest reliable radius (no extrapolation)."""
    return float(almgren(u, [r_max], d).values[0])


def height(u, r_list: Sequence[float], lam: float | None = None, d: int | None = None, **kw) -> DiagnosticCurve:
    """``H(r) = r^-(d + 2 lam) int_{dB_r} u^2``; nonincreasing when ``lam`` is the frequency at infinity.

    ``lam`` defaults to the frequency at the largest radius in ``r_list``.
    """
    dd = _dim(u, d)
    if lam is None:
        lam = frequency_at_infinity(u, max(r_list), d)
    c = _curve(u, lambda I, r: r ** (-(dd + 2 * lam)) * I.sphere(np.square, r), "height", r_list, d, **kw)
    c.extra["lambda"] = lam
    return c


def height_identity(u, r_list: Sequence[float], lam: float, d: int | None = None, rel_step: float = 1e-4) -> dict:
    """Compare ``d/dr log H`` (central differences in ``r``) with ``2 (Phi - lam) / r``."""
    dd = _dim(u, d)
    I = _Integrals(u, dd)
    lhs, rhs = [], []
    for r in r_list:
        s = rel_step * r
        Hp = (r + s) ** (-(dd + 2 * lam)) * I.sphere(np.square, r + s)
        Hm = (r - s) ** (-(dd + 2 * lam)) * I.sphere(np.square, r - s)
        lhs.append((np.log(Hp) - np.log(Hm)) / (2 * s))
        rhs.append(2.0 * (_frequency(I, r) - lam) / r)
    lhs, rhs = np.array(lhs), np.array(rhs)
    return {"r": list(map(float, r_list)), "dlogH": lhs.tolist(), "formula": rhs.tolist(),
            "max_abs_mismatch": float(np.max(np.abs(lhs - rhs)))}


def growth_check(u, lam_target: float, r_list: Sequence[float], d: int | None = None, tol: float = 1e-2) -> dict:
    """Ratios ``int_{dB_r} u^2 / (r^(d + 2 lam) int_{dB_1} u^2)``."""
    dd = _dim(u, d)
    if isinstance(u, GridField):
        top = u.spec.box_radius - u.spec.spacing
        if min(r_list) < 1.0 or max(r_list) > top + 1e-12:
            raise ValueError(f"radii must lie in [1, {top:g}]")
    I = _Integrals(u, dd)
    base = I.sphere(np.square, 1.0)
    ratios = [I.sphere(np.square, r) / (r ** (dd + 2 * lam_target) * base) for r in r_list]
    return {
        "r": list(map(float, r_list)),
        "ratios": [float(x) for x in ratios],
        "max_ratio": float(max(ratios)),
        "holds": bool(max(ratios) <= 1.0 + tol),
    }


@dataclass
class DoublingFit:
    slope: float
    pointwise: dict
    max_pointwise: float
    masses: dict


def doubling_fit(W, R_list: Sequence[float], d: int | None = None) -> DoublingFit:
    """Log-log slope of ``int_{dB_R} W^2`` against ``R`` for ``R >= 1``."""
    R = np.asarray(R_list, dtype=float)
    if np.any(R < 1.0):
        raise ValueError("doubling bound is stated for R >= 1")
    dd = _dim(W, d)
    I = _Integrals(W, dd)
    base = I.sphere(np.square, 1.0)
    masses = np.array([I.sphere(np.square, r) for r in R])
    slope = float(np.polyfit(np.log(R), np.log(masses), 1)[0]) if len(R) >= 2 else float("nan")
    point = {float(r): float(np.log(m / base) / np.log(r)) for r, m in zip(R, masses) if r > 1.0}
    return DoublingFit(slope, point, max(point.values()) if point else float("nan"),
                       {float(r): float(m) for r, m in zip(R, masses)})


def delta_measure_check(u: GridField, interior_margin: int = 2, zero_tol: float = 1e-12) -> dict:
    """Laplacian mass of contact cells against ``2 du/dy`` times the cell area.

    The contact set is the discrete zero set of ``u`` on the plane (``|u|``
    at most ``zero_tol`` times ``max |u|``).  Pointwise ratios are reported
    for contact nodes at least ``interior_margin`` nodes inside it.
    """
    from scipy.ndimage import binary_erosion

    from .obstacle import _full_bool

    spec = u.spec
    h = spec.spacing
    plane = u.plane()
    scale = max(float(np.max(np.abs(u.values))), 1e-300)
    lap = discrete_laplacian(u).values[..., 0]
    contact = (np.abs(plane) <= zero_tol * scale) & np.isfinite(lap)
    if not np.any(contact):
        return {"vacuous": True, "contact_nodes": 0, "interior_nodes": 0, "max_pointwise": 0.0,
                "total_mismatch": 0.0, "lap_mass": 0.0, "density_mass": 0.0}
    dy = one_sided_dy(u)
    mass_lap = h ** (spec.d + 1) * lap
    mass_dy = 2.0 * dy * h**spec.d
    mult = spec.multiplicity()[..., 0]
    sym = spec.symmetry[:-1]
    full = _full_bool(contact, sym)
    eroded = binary_erosion(full, iterations=interior_margin, border_value=0)
    # keep the stored (nonnegative) part of every symmetric axis
    inner = eroded[tuple(slice(full.shape[k] - contact.shape[k], None) for k in range(contact.ndim))]
    denom = np.abs(mass_dy[inner])
    rel = np.abs(mass_lap[inner] - mass_dy[inner]) / np.maximum(denom, 1e-300)
    tl = float(np.sum(mult[contact] * mass_lap[contact]))
    td = float(np.sum(mult[contact] * mass_dy[contact]))
    return {
        "vacuous": False,
        "contact_nodes": int(contact.sum()),
        "interior_nodes": int(inner.sum()),
        "max_pointwise": float(rel.max()) if rel.size else 0.0,
        "total_mismatch": abs(tl - td) / max(abs(td), 1e-300),
        "lap_mass": tl,
        "density_mass": td,
        "max_dy_on_contact": float(np.max(dy[contact])),
    }
