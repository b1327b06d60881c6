"""Scenario configuration: a strict ``key = value`` format with ``[section]`` headers.

Three sections are recognised.  ``[scenario]`` names the experiment and
holds the run plumbing, ``[grid]`` the discretisation and solver settings,
``[params]`` the scenario-specific inputs.  Every key has a documented
default (see ``lab print-defaults``) unless marked required; unknown keys,
duplicate keys and malformed values are errors that carry the line number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

SCENARIOS = (
    "construct-ellipsoid",
    "classify-expansion",
    "monotonicity-suite",
    "appendix-expansion",
    "uniqueness",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------- value types


def _number(text: str) -> float:
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)


def _float(text: str) -> float:
    return _number(text)


def _int(text: str) -> int:
    if not re.fullmatch(r"[+-]?\d+", text.strip()):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(text)


def _floats(text: str) -> tuple:
    parts = [t for t in text.split(",")]
    if not parts or any(not t.strip() for t in parts):
        raise ValueError(f"expected comma-separated numbers, got {text!r}")
    return tuple(_number(t) for t in parts)


def _ints(text: str) -> tuple:
    return tuple(_int(t) for t in text.split(","))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _str(text: str) -> str:
    if not text.strip():
        raise ValueError("empty value")
    return text.strip()


def _omega(text: str):
    t = text.strip()
    return "auto" if t == "auto" else _number(t)


def _scenario(text: str) -> str:
    t = text.strip()
    if t not in SCENARIOS:
        raise ValueError(f"unknown scenario {t!r} (choose from {', '.join(SCENARIOS)})")
    return t


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str
    required: bool = False


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


COMMON = {
    "name": Key(_scenario, None, "experiment to run", required=True),
    "d": Key(_int, 2, "dimension of the thin space (the full space has d + 1)"),
    "seed": Key(_int, 0, "64-bit seed for every sampled point set"),
    "output": Key(_str, "lab-output", "directory for report, curves, fields"),
    "workers": Key(_int, 1, "worker threads for independent members (1 = serial)"),
}

GRID = {
    "h": Key(_float, 1 / 64, "grid spacing (fractions such as 1/64 accepted)"),
    "box_radius": Key(_float, 2.25, "half-width of the box"),
    "tol": Key(_float, 1e-7, "projected SOR residual tolerance (Laplacian units)"),
    "omega": Key(_omega, "auto", "relaxation factor in (1, 2) or auto"),
    "max_iters": Key(_int, 100000, "sweep limit per level"),
}

PARAMS: dict[str, dict[str, Key]] = {
    "construct-ellipsoid": {
        "semi_axes": Key(_floats, None, "target thin ellipse semi-axes (d values, each < 1/2)", required=True),
        "thickness_start": Key(_float, 0.2, "first y semi-axis of the flattening family"),
        "thickness_ratio": Key(_float, 0.5, "geometric ratio of the thickness schedule"),
        "members": Key(_int, 11, "number of family members"),
        "r_list": Key(_floats, (0.25, 0.5, 1.0, 1.5, 2.0), "radii for the frequency curve"),
        "laplacian_band": Key(_float, 2.0, "excluded tube around the contact edge (units of h)"),
        "laplacian_tol": Key(_float, 0.05, "bound on the discrete Laplacian off the contact set"),
    },
    "classify-expansion": {
        "a": Key(_floats, None, "coefficients a_j of p (sum 1)", required=True),
        "n_list": Key(_ints, (4, 16, 64), "expansion indices n"),
        "beta_tol": Key(_float, 0.1, "relative change allowed between the last two beta"),
        "limit_radii": Key(_floats, (2.0, 3.0, 4.0), "spheres for sup |v|"),
        "cross_validate": Key(_bool, False, "compare with the exhaustion construction"),
        "cross_h": Key(_float, 1 / 32, "grid spacing of the exhaustion construction"),
        "cross_R_list": Key(_floats, (4.0, 6.0, 8.0), "ball radii of the exhaustion construction (rescaled units)"),
        "cross_points": Key(_int, 2000, "random points in B_2 for the comparison"),
        "nondegeneracy_n": Key(_int, 16, "member used for the contact-disc check"),
    },
    "monotonicity-suite": {
        "semi_axes": Key(_floats, (0.3, 0.3, 0.3), "full ellipsoid semi-axes (d + 1 values)"),
        "r_list": Key(_floats, (0.5, 1.0, 2.0, 4.0, 8.0), "radii for the Weiss curve"),
        "frequency_r_list": Key(_floats, (0.25, 0.5, 1.0, 1.5, 2.0), "radii for the frequency, height and mass curves"),
        "weiss_limit_tol": Key(_float, 0.02, "relative gap of W at the largest radius to alpha"),
        "frequency_cap": Key(_float, 2.05, "upper bound on the frequency of U - y^2/2"),
    },
    "appendix-expansion": {
        "a": Key(_floats, (0.5, 0.5), "coefficients a_j of p (sum 1)"),
        "c": Key(_float, 1.0, "constant c of p"),
        "R_list": Key(_floats, (4.0, 6.0, 8.0), "ball radii (rescaled units)"),
        "barrier_factor": Key(_float, 10.0, "barrier tolerance in units of h^2"),
        "slope_range": Key(_floats, (-1.3, -0.7), "accepted decay slope interval"),
        "decay_points": Key(_int, 7, "radii in the decay fit"),
    },
    "uniqueness": {
        "semi_axes": Key(_floats, (0.3, 0.2), "thin ellipse semi-axes"),
        "s": Key(_float, 2.5, "scale of the second boundary datum"),
        "members": Key(_int, 6, "members of the flattening family"),
        "deviation_tol": Key(_float, 1e-3, "relative ratio deviation allowed"),
    },
}

GRID_DEFAULTS = {
    "construct-ellipsoid": {},
    "classify-expansion": {"h": 1 / 16, "box_radius": 2.5},
    "monotonicity-suite": {},
    "appendix-expansion": {"h": 1 / 32},
    "uniqueness": {"h": 1 / 32, "box_radius": 1.0, "tol": 1e-10},
}


@dataclass
class ScenarioConfig:
    scenario: str
    d: int
    seed: int
    output: str
    workers: int
    grid: dict
    params: dict
    source: str | None = None
    explicit: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {
            "scenario": self.scenario,
            "d": self.d,
            "seed": self.seed,
            "workers": self.workers,
            "grid": {k: _jsonable(v) for k, v in sorted(self.grid.items())},
            "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
        }


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


_SECTION = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_-]*)\]$")
_PAIR = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _tokenize(text: str):
    """Yield ``(line, section, key, value)``."""
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in ("scenario", "grid", "params"):
                raise ConfigError(f"unknown section [{section}]", no)
            yield no, section, None, None
            continue
        m = _PAIR.match(line)
        if not m:
            raise ConfigError(f"syntax error: {line!r}", no)
        if section is None:
            raise ConfigError("key outside any section", no)
        yield no, section, m.group(1), m.group(2).strip()


def parse_config_text(text: str, source: str | None = None) -> ScenarioConfig:
    raw: dict[str, dict[str, tuple[int, str]]] = {"scenario": {}, "grid": {}, "params": {}}
    seen_sections: set = set()
    for no, section, key, value in _tokenize(text):
        if key is None:
            if section in seen_sections:
                raise ConfigError(f"duplicate section [{section}]", no)
            seen_sections.add(section)
            continue
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r}", no)
        raw[section][key] = (no, value)
    if "name" not in raw["scenario"]:
        raise ConfigError("missing required key 'name' in [scenario]")
    no, val = raw["scenario"]["name"]
    try:
        name = _scenario(val)
    except ValueError as exc:
        raise ConfigError(str(exc), no) from None

    def fill(section: str, schema: dict[str, Key], overrides: dict | None = None) -> tuple[dict, dict]:
        out, explicit = {}, {}
        for key, (no, text) in raw[section].items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]", no)
            try:
                out[key] = schema[key].parse(text)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"{key}: {exc}", no) from None
            explicit[key] = no
        for key, k in schema.items():
            if key in out:
                continue
            if k.required:
                raise ConfigError(f"missing required key {key!r} in [{section}]")
            out[key] = (overrides or {}).get(key, k.default)
        return out, explicit

    common, ex1 = fill("scenario", COMMON)
    grid, ex2 = fill("grid", GRID, GRID_DEFAULTS[name])
    params, ex3 = fill("params", PARAMS[name])
    cfg = ScenarioConfig(
        name, common["d"], common["seed"], common["output"], common["workers"], grid, params, source,
        {"scenario": ex1, "grid": ex2, "params": ex3},
    )
    validate(cfg)
    return cfg


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def _line(cfg: ScenarioConfig, section: str, key: str) -> int | None:
    return cfg.explicit.get(section, {}).get(key)


def validate(cfg: ScenarioConfig) -> None:
    """Check the inputs against the preconditions of the modules that will consume them."""
    from .harmonic import make_normalized_quadratic
    from .obstacle import SolverConfig
    from .potential import Ellipsoid

    def fail(section, key, msg):
        raise ConfigError(f"{key}: {msg}", _line(cfg, section, key))

    if cfg.d < 1:
        fail("scenario", "d", "dimension must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        fail("scenario", "seed", "seed must be a 64-bit unsigned integer")
    if cfg.workers < 1:
        fail("scenario", "workers", "need at least one worker")
    g = cfg.grid
    if not g["h"] > 0 or not g["box_radius"] > 0:
        fail("grid", "h", "spacing and box radius must be positive")
    ratio = g["box_radius"] / g["h"]
    if abs(ratio - round(ratio)) > 1e-9:
        fail("grid", "box_radius", "box radius must be a multiple of h")
    try:
        SolverConfig(omega=g["omega"], tol=g["tol"], max_iters=g["max_iters"])
    except ValueError as exc:
        fail("grid", "omega", str(exc))
    p = cfg.params
    d = cfg.d
    try:
        if cfg.scenario in ("construct-ellipsoid", "uniqueness"):
            ax = p["semi_axes"]
            if len(ax) != d:
                fail("params", "semi_axes", f"need {d} semi-axes for a thin ellipse")
            E = Ellipsoid(d, tuple(ax) + (0.0,))
            if max(E.semi_axes) >= 0.5:
                fail("params", "semi_axes", "rescale required: semi-axes must be < 1/2")
            if p["members"] < 3:
                fail("params", "members", "need at least three members")
        if cfg.scenario == "construct-ellipsoid":
            if not (0 < p["thickness_start"] < 0.5 and 0 < p["thickness_ratio"] < 1):
                fail("params", "thickness_start", "need 0 < start < 1/2 and 0 < ratio < 1")
            if max(p["r_list"]) > g["box_radius"] - g["h"]:
                fail("params", "r_list", "radii must stay inside the box")
        if cfg.scenario == "uniqueness" and not p["s"] > 0:
            fail("params", "s", "scale must be positive")
        if cfg.scenario == "monotonicity-suite":
            E = Ellipsoid(d, p["semi_axes"])
            if E.thin:
                fail("params", "semi_axes", "a full ellipsoid is required (positive y semi-axis)")
            if max(E.semi_axes) >= 0.5:
                fail("params", "semi_axes", "contact set must lie in B_1/2")
        if cfg.scenario in ("classify-expansion", "appendix-expansion"):
            if len(p["a"]) != d:
                fail("params", "a", f"need {d} coefficients")
            c = p["c"] if cfg.scenario == "appendix-expansion" else 1.0
            make_normalized_quadratic(list(p["a"]), c)
        if cfg.scenario == "classify-expansion":
            n = p["n_list"]
            if len(n) < 2 or min(n) < 2 or any(b <= a for a, b in zip(n, n[1:])):
                fail("params", "n_list", "need at least two increasing integers > 1")
            if p["nondegeneracy_n"] not in n:
                fail("params", "nondegeneracy_n", "must be one of n_list")
        if cfg.scenario == "appendix-expansion":
            R = p["R_list"]
            if len(R) < 2 or R[0] <= 2 or any(b <= a for a, b in zip(R, R[1:])):
                fail("params", "R_list", "need at least two increasing radii above 2")
            if R[-1] <= 4:
                fail("params", "R_list", "largest radius must exceed 4 so the decay fit spans [2, R/2]")
            lo, hi = p["slope_range"] if len(p["slope_range"]) == 2 else (None, None)
            if lo is None or lo >= hi:
                fail("params", "slope_range", "need two increasing numbers")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def defaults_text() -> str:
    """INI text listing every key, its default and what it controls."""
    out = ["# Defaults for every scenario; keys marked required have no default.", ""]

    def block(section, schema, overrides=None):
        out.append(f"[{section}]")
        for key, k in schema.items():
            out.append(f"# {k.doc}")
            if k.required:
                out.append(f"# {key} = (required)")
            else:
                out.append(f"{key} = {_fmt((overrides or {}).get(key, k.default))}")
        out.append("")

    block("scenario", COMMON)
    for name in SCENARIOS:
        out.append(f"# ---- scenario: {name}")
        block("grid", GRID, GRID_DEFAULTS[name])
        block("params", PARAMS[name])
    return "\n".join(out)
