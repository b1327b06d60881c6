"""Uniform Cartesian grids on symmetric boxes, finite differences and quadrature.

A grid covers the box ``[-R, R]^(d+1)``.  Axes flagged as symmetric are
stored on their non-negative half only; values at negative coordinates are
obtained by reflection, so even symmetry holds bit-exactly by construction.
The last axis is always the ``y`` axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ArrayFunc = Callable[[np.ndarray], np.ndarray]

_GF_MAGIC = b"GFLD"
_GF_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Box ``[-R, R]^(d+1)`` with spacing ``h`` and per-axis even symmetry.

    ``symmetry`` lists one flag per axis ``(x_1, ..., x_d, y)``.
    """

    d: int
    box_radius: float
    spacing: float
    symmetry: tuple[bool, ...] = ()

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        if not (self.box_radius > 0 and self.spacing > 0):
            raise ValueError("box_radius and spacing must be positive")
        ratio = 2.0 * self.box_radius / self.spacing
        n_cells = int(round(ratio))
        if abs(ratio - n_cells) > 1e-9 * max(ratio, 1.0) or n_cells % 2:
            raise ValueError(
                f"spacing misaligned: 2*R_box/h = {ratio:g} must be an even integer"
            )
        sym = tuple(bool(s) for s in self.symmetry) if self.symmetry else (False,) * (self.d + 1)
        if len(sym) != self.d + 1:
            raise ValueError(f"need {self.d + 1} symmetry flags, got {len(sym)}")
        object.__setattr__(self, "symmetry", sym)

    @property
    def ndim(self) -> int:
        return self.d + 1

    @property
    def n_cells(self) -> int:
        return int(round(2.0 * self.box_radius / self.spacing))

    @property
    def half(self) -> int:
        return self.n_cells // 2

    @property
    def nodes_per_axis(self) -> int:
        """Node count per axis of the full (unreduced) box."""
        return self.n_cells + 1

    @property
    def shape(self) -> tuple[int, ...]:
        full = self.nodes_per_axis
        return tuple(self.half + 1 if s else full for s in self.symmetry)

    def origin_index(self, axis: int) -> int:
        return 0 if self.symmetry[axis] else self.half

    def axis(self, k: int) -> np.ndarray:
        h = self.spacing
        if self.symmetry[k]:
            return h * np.arange(self.half + 1)
        return h * (np.arange(self.nodes_per_axis) - self.half)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(k) for k in range(self.ndim)]

    def multiplicity(self) -> np.ndarray:
        """Number of full-box nodes each stored node stands for (broadcastable)."""
        out = np.ones(self.shape)
        for k, s in enumerate(self.symmetry):
            if s:
                m = np.full(self.shape[k], 2.0)
                m[0] = 1.0
                out = out * m.reshape([-1 if j == k else 1 for j in range(self.ndim)])
        return out

    def header(self) -> dict:
        return {
            "d": self.d,
            "box_radius": self.box_radius,
            "spacing": self.spacing,
            "symmetry": list(self.symmetry),
        }


@dataclass
class GridField:
    """Nodal values on the stored part of a :class:`GridSpec` grid.

    Non-finite entries mark nodes where a derived quantity is undefined
    (for instance the Laplacian on the outer boundary layer).
    """

    spec: GridSpec
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.spec.shape}")

    def full(self) -> np.ndarray:
        """Values on the whole box, reflecting across the symmetric axes."""
        v = self.values
        for k, s in enumerate(self.spec.symmetry):
            if s:
                mirrored = np.flip(np.take(v, np.arange(1, v.shape[k]), axis=k), axis=k)
                v = np.concatenate([mirrored, v], axis=k)
        return v

    def at(self, index: Sequence[int]) -> float:
        """Value at a full-box index (origin-centred, may be negative)."""
        idx = []
        for k, i in enumerate(index):
            if self.spec.symmetry[k]:
                idx.append(abs(i))
            else:
                idx.append(i + self.spec.half)
        return float(self.values[tuple(idx)])

    def plane(self) -> np.ndarray:
        """Values on ``{y = 0}``."""
        return np.take(self.values, self.spec.origin_index(self.spec.ndim - 1), axis=-1)

    def copy(self) -> "GridField":
        return GridField(self.spec, self.values.copy(), dict(self.meta))


def restrict(f: GridField, radius: float) -> GridField:
    """Sub-field on the smallest aligned box ``[-R', R']`` with ``R' >= radius``."""
    spec = f.spec
    m = int(np.ceil(radius / spec.spacing - 1e-9))
    if m >= spec.half:
        return f
    sub = GridSpec(spec.d, m * spec.spacing, spec.spacing, spec.symmetry)
    idx = tuple(
        slice(0, m + 1) if s else slice(spec.half - m, spec.half + m + 1) for s in spec.symmetry
    )
    return GridField(sub, f.values[idx], dict(f.meta))


def build_grid(spec: GridSpec) -> GridField:
    return GridField(spec, np.zeros(spec.shape))


def node_coordinates(spec: GridSpec, lead: int | slice = slice(None)) -> np.ndarray:
    """Coordinates of the stored nodes, shape ``(..., d+1)``.

    ``lead`` restricts the first axis, which keeps memory bounded when a
    large grid is processed in slabs.
    """
    axes = spec.axes()
    axes[0] = np.atleast_1d(axes[0][lead])
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def sample_field(spec: GridSpec, func: ArrayFunc, slab: int = 16) -> GridField:
    """Evaluate a vectorised function at every stored node."""
    out = np.empty(spec.shape)
    for start in range(0, spec.shape[0], slab):
        sl = slice(start, min(start + slab, spec.shape[0]))
        pts = node_coordinates(spec, sl)
        out[sl] = np.asarray(func(pts.reshape(-1, spec.ndim)), dtype=float).reshape(pts.shape[:-1])
    return GridField(spec, out)


def _padded(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Pad one layer per side: reflected on symmetric low ends, NaN elsewhere."""
    v = values
    for k, s in enumerate(spec.symmetry):
        shape = list(v.shape)
        shape[k] = 1
        nan = np.full(shape, np.nan)
        low = np.take(v, [1], axis=k) if s else nan
        v = np.concatenate([low, v, nan], axis=k)
    return v


def discrete_laplacian(f: GridField) -> GridField:
    """Second-order ``2(d+1)+1``-point Laplacian; NaN on the boundary layer."""
    spec = f.spec
    p = _padded(f.values, spec)
    inner = tuple(slice(1, -1) for _ in range(spec.ndim))
    centre = p[inner]
    acc = np.zeros_like(centre)
    for k in range(spec.ndim):
        up = list(inner)
        dn = list(inner)
        up[k] = slice(2, None)
        dn[k] = slice(0, -2)
        acc += p[tuple(up)] + p[tuple(dn)]
    lap = (acc - 2.0 * spec.ndim * centre) / spec.spacing**2
    return GridField(spec, lap)


def central_gradient(f: GridField) -> np.ndarray:
    """Central-difference gradient, shape ``values.shape + (d+1,)``; NaN on the boundary."""
    spec = f.spec
    p = _padded(f.values, spec)
    inner = tuple(slice(1, -1) for _ in range(spec.ndim))
    grads = []
    for k in range(spec.ndim):
        up = list(inner)
        dn = list(inner)
        up[k] = slice(2, None)
        dn[k] = slice(0, -2)
        grads.append((p[tuple(up)] - p[tuple(dn)]) / (2.0 * spec.spacing))
    return np.stack(grads, axis=-1)


def one_sided_dy(f: GridField) -> np.ndarray:
    """Second-order one-sided ``du/dy`` at ``y = 0+`` on the plane nodes."""
    spec = f.spec
    k0 = spec.origin_index(spec.ndim - 1)
    u0 = np.take(f.values, k0, axis=-1)
    u1 = np.take(f.values, k0 + 1, axis=-1)
    u2 = np.take(f.values, k0 + 2, axis=-1)
    return (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * spec.spacing)


def interpolate(f: GridField, X) -> np.ndarray | float:
    """Multilinear interpolation at one point or an array of points ``(..., d+1)``."""
    spec = f.spec
    X = np.asarray(X, dtype=float)
    scalar = X.ndim == 1
    pts = np.atleast_2d(X).reshape(-1, spec.ndim)
    R = spec.box_radius
    if np.any(np.abs(pts) > R * (1.0 + 1e-12)):
        raise ValueError("interpolation point outside box")
    h = spec.spacing
    base = []
    frac = []
    for k in range(spec.ndim):
        c = np.abs(pts[:, k]) if spec.symmetry[k] else pts[:, k] + R
        t = c / h
        i0 = np.clip(np.floor(t).astype(np.int64), 0, spec.shape[k] - 2)
        base.append(i0)
        frac.append(t - i0)
    out = np.zeros(pts.shape[0])
    for corner in range(2 ** spec.ndim):
        w = np.ones(pts.shape[0])
        idx = []
        for k in range(spec.ndim):
            bit = (corner >> k) & 1
            w = w * (frac[k] if bit else 1.0 - frac[k])
            idx.append(base[k] + bit)
        out += w * f.values[tuple(idx)]
    if scalar:
        return float(out[0])
    return out.reshape(X.shape[:-1])


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule on ``dB_r`` in ``R^(d+1)``; weights sum to the surface area.

    The polar axis is ``y``.  The polar variable is split at the equator
    ``{y = 0}`` so integrands with a kink across the thin space stay
    smooth on each piece.
    """

    d: int
    radius: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def directions(self) -> np.ndarray:
        return self.nodes / self.radius


def _split_gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [-1, 0] and [0, 1], ``n // 2`` nodes each."""
    if n < 2 or n % 2:
        raise ValueError("polar order must be an even integer >= 2")
    x, w = np.polynomial.legendre.leggauss(n // 2)
    t = np.concatenate([0.5 * (x - 1.0), 0.5 * (x + 1.0)])
    return t, np.concatenate([0.5 * w, 0.5 * w])


def _unit_sphere_rule(d: int, n_polar: int, n_azimuth: int) -> tuple[np.ndarray, np.ndarray]:
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    wphi = 2.0 * np.pi / n_azimuth
    t, wt = _split_gauss(n_polar)
    s = np.sqrt(1.0 - t**2)
    base = np.stack(
        [np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)), np.outer(t, np.ones_like(phi))],
        axis=-1,
    ).reshape(-1, 3)
    wbase = np.outer(wt, np.full(n_azimuth, wphi)).ravel()
    if d == 2:
        return base, wbase
    if d == 3:
        # latitude alpha with the y axis as pole; x-part spans an S^2
        a, wa = _split_gauss(n_polar)
        alpha = 0.5 * np.pi * a
        wa = 0.5 * np.pi * wa * np.cos(alpha) ** 2
        ca, sa = np.cos(alpha), np.sin(alpha)
        nodes = np.concatenate(
            [ca[:, None, None] * base[None, :, :], np.broadcast_to(sa[:, None, None], (len(a), len(base), 1))],
            axis=-1,
        ).reshape(-1, 4)
        w = np.outer(wa, wbase).ravel()
        return nodes, w
    raise NotImplementedError(f"sphere quadrature for d={d}")


def sphere_quadrature(d: int, radius: float, n_polar: int = 32, n_azimuth: int = 64) -> SphereQuadrature:
    if radius <= 0:
        raise ValueError("radius must be positive")
    dirs, w = _unit_sphere_rule(d, n_polar, n_azimuth)
    return SphereQuadrature(d, float(radius), radius * dirs, w * radius**d)


def sphere_area(d: int, radius: float = 1.0) -> float:
    from math import gamma, pi

    n = d + 1
    return 2.0 * pi ** (n / 2) / gamma(n / 2) * radius**d


def ball_volume(d: int, radius: float = 1.0) -> float:
    from math import gamma, pi

    n = d + 1
    return pi ** (n / 2) / gamma(n / 2 + 1) * radius**n


def _check_inside(spec: GridSpec, r: float, what: str):
    if r + spec.spacing > spec.box_radius * (1.0 + 1e-12):
        raise ValueError(f"{what} of radius {r:g} not contained in box (R_box={spec.box_radius:g})")


def sphere_integral(f, q: SphereQuadrature) -> float:
    """``sum(weights * f(nodes))`` for a grid field or a vectorised callable."""
    if isinstance(f, GridField):
        _check_inside(f.spec, q.radius, "sphere")
        vals = interpolate(f, q.nodes)
    else:
        vals = np.asarray(f(q.nodes), dtype=float)
    return float(np.dot(q.weights, vals))


def ball_integral(
    f: ArrayFunc,
    d: int,
    r: float,
    n_radial: int = 24,
    n_polar: int = 32,
    n_azimuth: int = 64,
    breaks: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Integral of a callable over ``B_r`` by radial Gauss-Legendre times a sphere rule.

    ``breaks`` maps unit directions to a radius where the integrand may be
    non-smooth along the ray; the radial rule is then split there.
    """
    dirs, wdir = _unit_sphere_rule(d, n_polar, n_azimuth)
    x, w = np.polynomial.legendre.leggauss(n_radial)
    if breaks is None:
        segs = [(np.zeros(len(dirs)), np.full(len(dirs), r))]
    else:
        b = np.clip(np.asarray(breaks(dirs), dtype=float), 0.0, r)
        segs = [(np.zeros(len(dirs)), b), (b, np.full(len(dirs), r))]
    total = 0.0
    for lo, hi in segs:
        half = 0.5 * (hi - lo)
        rho = lo[:, None] + half[:, None] * (x[None, :] + 1.0)
        wr = half[:, None] * w[None, :] * rho**d
        pts = rho[:, :, None] * dirs[:, None, :]
        vals = np.asarray(f(pts.reshape(-1, d + 1)), dtype=float).reshape(rho.shape)
        total += float(np.sum(wdir[:, None] * wr * vals))
    return total


def _cell_fractions(points: np.ndarray, h: float, r: float) -> np.ndarray:
    """Fraction of each node-centred cell inside ``B_r`` by ``4^(d+1)`` subsampling."""
    n = points.shape[-1]
    sub = (np.arange(4) + 0.5) / 4.0 - 0.5
    offs = np.stack(np.meshgrid(*([sub] * n), indexing="ij"), axis=-1).reshape(-1, n) * h
    inside = np.zeros(points.shape[0])
    for o in offs:
        inside += np.sum((points + o) ** 2, axis=-1) <= r * r
    return inside / len(offs)


def ball_gradient_energy(f: GridField, r: float) -> float:
    """``int_{B_r} |grad f|^2`` with central differences and partial cell volumes."""
    _check_inside(f.spec, r, "ball")
    f = restrict(f, r + 2.0 * f.spec.spacing)
    spec = f.spec
    h = spec.spacing
    grad = central_gradient(f)
    g2 = np.sum(grad**2, axis=-1)
    pts = node_coordinates(spec)
    rho = np.sqrt(np.sum(pts**2, axis=-1))
    halfdiag = 0.5 * h * np.sqrt(spec.ndim)
    frac = np.where(rho + halfdiag <= r, 1.0, 0.0)
    cut = np.abs(rho - r) < halfdiag
    frac[cut] = _cell_fractions(pts[cut], h, r)
    mult = spec.multiplicity()
    weight = frac * mult
    mask = weight > 0
    return float(np.sum(g2[mask] * weight[mask]) * h**spec.ndim)


def save_field(f: GridField, path) -> Path:
    """Write the ``.gf`` binary layout: little-endian header then float64 payload."""
    path = Path(path)
    spec = f.spec
    head = struct.pack("<4sIidd", _GF_MAGIC, _GF_VERSION, spec.d, spec.box_radius, spec.spacing)
    flags = struct.pack(f"<{spec.ndim}i", *(int(s) for s in spec.symmetry))
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C")
    path.write_bytes(head + flags + payload)
    return path


def load_field(path) -> GridField:
    raw = Path(path).read_bytes()
    size = struct.calcsize("<4sIidd")
    magic, version, d, R, h = struct.unpack("<4sIidd", raw[:size])
    if magic != _GF_MAGIC or version != _GF_VERSION:
        raise ValueError(f"{path}: not a grid field file")
    nflag = struct.calcsize(f"<{d + 1}i")
    flags = struct.unpack(f"<{d + 1}i", raw[size : size + nflag])
    spec = GridSpec(d, R, h, tuple(bool(x) for x in flags))
    vals = np.frombuffer(raw[size + nflag :], dtype="<f8").reshape(spec.shape)
    return GridField(spec, vals.copy())


def ball_field_integral(f: GridField, r: float) -> float:
    """``int_{B_r} f`` with node-centred cells and partial cell volumes."""
    _check_inside(f.spec, r, "ball")
    f = restrict(f, r + 2.0 * f.spec.spacing)
    spec = f.spec
    h = spec.spacing
    pts = node_coordinates(spec)
    rho = np.sqrt(np.sum(pts**2, axis=-1))
    halfdiag = 0.5 * h * np.sqrt(spec.ndim)
    frac = np.where(rho + halfdiag <= r, 1.0, 0.0)
    cut = np.abs(rho - r) < halfdiag
    frac[cut] = _cell_fractions(pts[cut], h, r)
    weight = frac * spec.multiplicity()
    mask = weight > 0
    return float(np.sum(f.values[mask] * weight[mask]) * h**spec.ndim)


def coarsened(f: GridField) -> GridField | None:
    """Every other node, when the result is again an aligned grid."""
    spec = f.spec
    if spec.n_cells % 4:
        return None
    sub = GridSpec(spec.d, spec.box_radius, 2.0 * spec.spacing, spec.symmetry)
    return GridField(sub, f.values[tuple(slice(0, None, 2) for _ in range(spec.ndim))], dict(f.meta))
