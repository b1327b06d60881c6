"""``lab`` command line: run scenarios, print defaults, verify stored reports.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 invalid input
(config, report or artifacts), 3 a solver did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, defaults_text, parse_config

log = logging.getLogger("signorini_lab")

EXIT_OK, EXIT_ASSERT, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


class SolverFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- report


def _clean(v):
    """JSON-ready copy with numpy scalars and arrays converted and non-finite floats as strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def _num(x):
    """Undo the string encoding of non-finite floats."""
    if isinstance(x, str) and x in ("nan", "inf", "-inf"):
        return float(x)
    if isinstance(x, list):
        return [_num(v) for v in x]
    return x


def check(comparator: str, measured, tolerance) -> bool:
    measured, tolerance = _num(measured), _num(tolerance)
    if comparator == "<=":
        return bool(measured <= tolerance)
    if comparator == ">=":
        return bool(measured >= tolerance)
    if comparator == "in":
        return bool(tolerance[0] <= measured <= tolerance[1])
    if comparator == "strictly-decreasing":
        return all(b < a for a, b in zip(measured, measured[1:]))
    if comparator == "is":
        return measured == tolerance
    raise ValueError(f"unknown comparator {comparator!r}")


@dataclass
class Curve:
    name: str
    quantity: str
    file: str
    x_label: str
    y_label: str
    illustrates: str
    annotations: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: dict
    steps: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: str = "ok"

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def assert_(self, name: str, measured, comparator: str, tolerance, source: dict | None = None):
        measured = _clean(measured)
        entry = {
            "name": name,
            "measured": measured,
            "comparator": comparator,
            "tolerance": _clean(tolerance),
            "passed": check(comparator, measured, _clean(tolerance)),
        }
        if source:
            entry["source"] = source
        self.assertions.append(entry)
        log.info("%s %s: %s %s %s", "PASS" if entry["passed"] else "FAIL", name, measured, comparator, tolerance)

    def exit_code(self) -> int:
        if self.status == "solver-failure":
            return EXIT_SOLVER
        return EXIT_OK if self.passed else EXIT_ASSERT

    def to_json(self) -> dict:
        return _clean(
            {
                "config": self.config,
                "steps": self.steps,
                "assertions": self.assertions,
                "curves": [c.__dict__ for c in self.curves],
                "artifacts": self.artifacts,
                "passed": self.passed,
                "status": self.status,
                "exit_code": self.exit_code(),
            }
        )


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Scenario context: output directory, report, timers."""

    def __init__(self, cfg: ScenarioConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.report = ExperimentReport(cfg.echo())
        out.mkdir(parents=True, exist_ok=True)

    def timed(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.report.timings[name] = time.perf_counter() - self.t

        return _T()

    def artifact(self, rel: str):
        self.report.artifacts[rel] = _sha256(self.out / rel)

    def curve(self, name: str, curve, x_label: str, y_label: str, illustrates: str, **annotations):
        rel = f"{name}.csv"
        curve.write_csv(self.out / rel)
        self.artifact(rel)
        self.report.curves.append(Curve(name, curve.quantity, rel, x_label, y_label, illustrates, _clean(annotations)))
        return rel

    def field(self, name: str, f):
        from .grid import save_field

        rel = f"{name}.gf"
        save_field(f, self.out / rel)
        self.artifact(rel)

    def solver(self, ok: bool, what: str):
        if not ok:
            self.report.status = "solver-failure"
            raise SolverFailure(what)


# ---------------------------------------------------------------- scenarios


def _solver_config(cfg: ScenarioConfig):
    from .obstacle import SolverConfig

    g = cfg.grid
    return SolverConfig(omega=g["omega"], tol=g["tol"], max_iters=g["max_iters"])


def _thin_grid(cfg: ScenarioConfig):
    from .grid import GridSpec

    return GridSpec(cfg.d, cfg.grid["box_radius"], cfg.grid["h"], (True,) * (cfg.d + 1))


def _edge_distance(E, X: np.ndarray) -> np.ndarray:
    """Distance from points to the edge ``dE'`` of a thin ellipse in the plane ``{y = 0}``."""
    from scipy.spatial import cKDTree

    from .obstacle import _ellipsoid_surface

    axes = np.asarray(E.semi_axes[:-1])
    surf = _ellipsoid_surface(axes, 1024 if len(axes) == 2 else 4096)
    pts = np.concatenate([surf, np.zeros((len(surf), 1))], axis=1)
    return cKDTree(pts).query(X.reshape(-1, X.shape[-1]))[0].reshape(X.shape[:-1])


def construct_ellipsoid(run: Run):
    from .diagnostics import almgren, delta_measure_check, growth_check
    from .grid import discrete_laplacian, node_coordinates
    from .linearization import build_theorem1_sequence, limit_field
    from .obstacle import extract_contact_set
    from .potential import Ellipsoid

    cfg, p, rep = run.cfg, run.cfg.params, run.report
    h = cfg.grid["h"]
    E = Ellipsoid(cfg.d, tuple(p["semi_axes"]) + (0.0,))
    sched = [p["thickness_start"] * p["thickness_ratio"] ** k for k in range(p["members"])]
    with run.timed("sequence"):
        seq = build_theorem1_sequence(E, sched, workers=cfg.workers)
    rep.steps["sequence"] = seq.to_json()
    with run.timed("limit"):
        u = limit_field(seq, _thin_grid(cfg))
    run.field("limit", u)
    cs = extract_contact_set(u, thin=True)
    axes = cs.fitted_ellipsoid.semi_axes[:-1] if cs.fitted_ellipsoid is not None else None
    rep.steps["contact"] = {"fitted_semi_axes": axes, "hausdorff_to_fit": cs.hausdorff_to_fit, "nodes": cs.count()}
    err = float(np.max(np.abs(np.asarray(axes) - np.asarray(p["semi_axes"])))) if axes is not None else float("inf")
    rep.assert_("contact_semi_axes_error", err, "<=", 2 * h)
    rep.assert_("plane_min", float(np.min(u.plane())), ">=", -1e-8)
    with run.timed("laplacian"):
        lap = discrete_laplacian(u).values
        X = node_coordinates(u.spec)
        dist = _edge_distance(E, X)
        onE = E.contains(X, tol=0.0) & (X[..., -1] == 0.0)
        band = dist <= p["laplacian_band"] * h
        sel = np.isfinite(lap) & ~onE & ~band
        tube = np.isfinite(lap) & ~onE & band
    rep.steps["laplacian"] = {
        "max_outside_tube": float(np.max(lap[sel])),
        "max_in_tube": float(np.max(lap[tube])) if np.any(tube) else None,
        "tube_width_h": p["laplacian_band"],
    }
    rep.assert_("laplacian_off_contact", float(np.max(lap[sel])), "<=", p["laplacian_tol"])
    with run.timed("frequency"):
        freq = almgren(u, p["r_list"])
    rng = float(np.ptp(freq.values))
    run.curve(
        "frequency", freq, "r", "Phi(u; r)",
        "frequency of the thin limit is nondecreasing and bounded by 2",
        monotone_defect=freq.monotone_defect,
    )
    rep.assert_("frequency_monotone_defect", freq.monotone_defect, "<=", 1e-3, {"csv": "frequency.csv", "statistic": "monotone_defect"})
    rep.assert_("frequency_cap", float(np.max(freq.values)), "<=", 2.05, {"csv": "frequency.csv", "statistic": "max"})
    rep.steps["frequency_range"] = rng
    rep.assert_("cauchy_gaps", seq.gaps, "strictly-decreasing", None)
    dm = delta_measure_check(u)
    rep.steps["delta_measure"] = dm
    rep.assert_("delta_measure_total", dm["total_mismatch"], "<=", 0.05)
    rep.assert_("delta_measure_pointwise", dm["max_pointwise"], "<=", 0.15)
    top = cfg.grid["box_radius"] - h
    radii = [r for r in (1.0, 1.25, 1.5, 1.75, 2.0) if r <= top]
    if radii:
        gc = growth_check(u, 2.0, radii)
        rep.steps["growth"] = gc
        rep.assert_("growth_ratio", gc["max_ratio"], "<=", 1.01)


def classify_expansion(run: Run):
    from .grid import interpolate
    from .harmonic import make_normalized_quadratic
    from .linearization import build_expansion_sequence, expansion_limit
    from .obstacle import extract_contact_set
    from .thin import construct_global_from_polynomial, nondegeneracy_check

    cfg, p, rep = run.cfg, run.cfg.params, run.report
    h = cfg.grid["h"]
    poly = make_normalized_quadratic(list(p["a"]), 1.0)
    with run.timed("sequence"):
        seq = build_expansion_sequence(poly, p["n_list"], workers=cfg.workers)
    rep.steps["sequence"] = seq.to_json()
    run.solver(all(m.converged for m in seq.members), "inverse ellipsoid Newton did not converge")
    thick = [m.E.semi_axes[-1] * np.sqrt(m.n) for m in seq.members]
    rep.assert_("thickness_times_sqrt_n", max(thick), "<=", 2.0)
    low = min(min(m.E.semi_axes[:-1]) for m in seq.members)
    rep.assert_("min_planar_semi_axis", low, ">=", 1.0 / (8.0 * seq.R0))
    b1, b2 = seq.members[-2].beta, seq.members[-1].beta
    rep.assert_("beta_change", abs(b2 - b1) / b1, "<=", p["beta_tol"])
    with run.timed("limit"):
        lim = expansion_limit(seq, _thin_grid(cfg), p["limit_radii"], beta_tol=float("inf"))
    run.field("limit", lim.u)
    cs = extract_contact_set(lim.u, thin=True)
    rep.steps["limit"] = {
        "beta": lim.beta,
        "sup_v": lim.sup_v,
        "contact_semi_axes": lim.contact_axes,
        "member_semi_axes": lim.member_axes,
        "hausdorff_to_fit": cs.hausdorff_to_fit,
    }
    rep.assert_("contact_is_thin_ellipse", cs.hausdorff_to_fit if cs.fitted_ellipsoid else float("inf"), "<=", 2.0)
    sups = [lim.sup_v[float(r)] for r in p["limit_radii"]]
    rep.assert_("sup_v_decreasing", sups, "strictly-decreasing", None)
    n = p["nondegeneracy_n"]
    mem = next(m for m in seq.members if m.n == n)
    R = 4.0 * seq.R0
    nd = nondegeneracy_check(mem.U, poly.a, 1.0 / (2 * n), 1.0 / n, R, h=h)
    rep.steps["nondegeneracy"] = nd.__dict__
    rep.assert_("nondegeneracy_applicable", nd.applicable, "is", True)
    rep.assert_("nondegeneracy_missing_nodes", nd.missing_nodes if nd.applicable else -1, "is", 0)
    if p["cross_validate"]:
        ch = p["cross_h"]
        with run.timed("cross_validation"):
            u, certs, drep = construct_global_from_polynomial(
                poly, p["cross_R_list"], cfg=_solver_config(cfg), h=ch
            )
        run.solver(drep["converged"], "projected SOR did not converge")
        rs = np.random.default_rng(cfg.seed)
        X = rs.uniform(-2.0, 2.0, (4 * p["cross_points"], cfg.d + 1))
        X = X[np.sum(X**2, axis=1) <= 4.0][: p["cross_points"]]
        t = drep["scale"]
        g = t * t * interpolate(u.meta["extrapolated"], X / t)
        diff = float(np.max(np.abs(seq.field()(X) - g)))
        rep.steps["cross_validation"] = {"max_difference": diff, "points": len(X), "scale": t}
        rep.assert_("cross_validation", diff, "<=", 20 * ch * ch)


def monotonicity_suite(run: Run):
    from .diagnostics import almgren, alpha, boundary_mass, doubling_fit, height, weiss
    from .linearization import ShiftedSolution
    from .potential import Ellipsoid, build_obstacle_solution

    cfg, p, rep = run.cfg, run.cfg.params, run.report
    U = build_obstacle_solution(Ellipsoid(cfg.d, p["semi_axes"]))
    W = ShiftedSolution(U, 1.0)
    a = alpha(cfg.d)
    rep.steps["alpha"] = a
    with run.timed("weiss"):
        wc = weiss(U, p["r_list"])
    run.curve("weiss", wc, "r", "W(U; r)", "Weiss energy is nondecreasing and tends to alpha_d", alpha=a)
    rep.assert_("weiss_monotone_defect", wc.monotone_defect, "<=", 1e-6 * abs(a), {"csv": "weiss.csv", "statistic": "monotone_defect"})
    rep.assert_("weiss_limit_gap", abs(wc.values[-1] - a) / a, "<=", p["weiss_limit_tol"])
    rl = p["frequency_r_list"]
    with run.timed("frequency"):
        fc = almgren(W, rl)
        hc = height(W, rl)
        bc = boundary_mass(W, rl)
    run.curve("frequency", fc, "r", "Phi(U - y^2/2; r)", "frequency of U - y^2/2 stays below 2 + 0.05")
    run.curve("height", hc, "r", "H(r)", "height with the frequency at infinity is nonincreasing", **{"lambda": hc.extra["lambda"]})
    run.curve("boundary_mass", bc, "r", "int_{dB_r} W^2", "boundary mass of W grows with r")
    rep.assert_("frequency_monotone_defect", fc.monotone_defect, "<=", 1e-3 * float(np.ptp(fc.values)), {"csv": "frequency.csv", "statistic": "monotone_defect"})
    rep.assert_("frequency_cap", float(np.max(fc.values)), "<=", p["frequency_cap"], {"csv": "frequency.csv", "statistic": "max"})
    rep.assert_("height_monotone_defect", hc.monotone_defect, "<=", 1e-3 * float(np.ptp(hc.values)), {"csv": "height.csv", "statistic": "monotone_defect"})
    dfit = doubling_fit(W, [1.0, 2.0, 4.0])
    rep.steps["doubling"] = dfit.__dict__
    mu = list(dfit.pointwise.values())
    rep.assert_("doubling_stability", abs(mu[-1] - mu[0]) / abs(mu[0]), "<=", 0.1)


def appendix_expansion(run: Run):
    from .diagnostics import DiagnosticCurve
    from .grid import restrict
    from .harmonic import make_normalized_quadratic
    from .thin import construct_global_from_polynomial

    cfg, p, rep = run.cfg, run.cfg.params, run.report
    h = cfg.grid["h"]
    poly = make_normalized_quadratic(list(p["a"]), p["c"])
    with run.timed("construct"):
        u, certs, drep = construct_global_from_polynomial(
            poly, p["R_list"], cfg=_solver_config(cfg), h=h, n_decay=p["decay_points"]
        )
    run.solver(drep["converged"], "projected SOR did not converge")
    rep.steps["decay"] = drep
    rep.steps["certificates"] = [
        {"R": c.R, "m": c.m, "max_violation": c.max_violation, "n_points": c.n_points,
         "worst_points": c.worst_points, "worst_values": c.worst_values}
        for c in certs
    ]
    for c in certs:
        rep.assert_(f"barrier_R{c.R:g}", c.max_violation, "<=", p["barrier_factor"] * h * h)
    rep.assert_("decay_slope", drep["slope"], "in", list(p["slope_range"]))
    rep.assert_("contact_in_sublevel_set", drep["contact_in_sublevel_set"], "is", True)
    curve = DiagnosticCurve("decay", drep["radii"], drep["spherical_mean_extrapolated"], 0.0)
    curve.monotone_defect = float(np.max(curve.defects()))
    run.curve(
        "decay", curve, "|X|", "spherical mean of u - p",
        "u - p decays like |X|^(1-d) at infinity",
        fitted_slope=drep["slope"], raw_slope=drep["raw_slope"], target_slope=drep["target_slope"],
    )
    run.field("inner", restrict(u.meta["extrapolated"], 2.0))


def uniqueness(run: Run):
    from .potential import Ellipsoid
    from .thin import uniqueness_experiment

    cfg, p, rep = run.cfg, run.cfg.params, run.report
    E = Ellipsoid(cfg.d, tuple(p["semi_axes"]) + (0.0,))
    sched = [0.2 * 0.5**k for k in range(p["members"])]
    with run.timed("experiment"):
        ur = uniqueness_experiment(E, p["s"], sched, h=cfg.grid["h"], box_radius=cfg.grid["box_radius"], cfg=_solver_config(cfg))
    rep.steps["uniqueness"] = ur.to_json()
    run.solver(ur.converged, "projected SOR did not converge")
    rep.assert_("ratio_deviation", ur.max_deviation, "<=", p["deviation_tol"])
    rep.assert_("ratio_median", abs(ur.median_ratio - p["s"]) / p["s"], "<=", p["deviation_tol"])


RUNNERS = {
    "construct-ellipsoid": construct_ellipsoid,
    "classify-expansion": classify_expansion,
    "monotonicity-suite": monotonicity_suite,
    "appendix-expansion": appendix_expansion,
    "uniqueness": uniqueness,
}


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> ExperimentReport:
    run = Run(cfg, Path(out_dir or cfg.output))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            RUNNERS[cfg.scenario](run)
        except SolverFailure as exc:
            run.report.steps["solver_failure"] = str(exc)
    write_report(run.report, run.out)
    return run.report


def emit_plotdata(report: ExperimentReport, out_dir) -> Path:
    """Write ``manifest.json`` describing each curve CSV already in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "curves": [
            {
                "name": c.name,
                "quantity": c.quantity,
                "file": c.file,
                "x_label": c.x_label,
                "y_label": c.y_label,
                "illustrates": c.illustrates,
                "annotations": c.annotations,
            }
            for c in report.curves
        ]
    }
    path = out / "manifest.json"
    path.write_text(dumps(_clean(doc)), encoding="utf-8", newline="\n")
    return path


def write_report(report: ExperimentReport, out: Path):
    emit_plotdata(report, out)
    report.artifacts["manifest.json"] = _sha256(out / "manifest.json")
    (out / "report.json").write_text(dumps(report.to_json()), encoding="utf-8", newline="\n")
    (out / "timings.json").write_text(dumps(_clean(report.timings)), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------- verify


def _csv_statistic(path: Path, statistic: str) -> float:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["r", "value", "defect"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    vals = np.array([float(r[1]) for r in rows[1:]])
    dfs = np.array([float(r[2]) for r in rows[1:]])
    if statistic == "monotone_defect":
        return float(np.max(dfs[1:])) if len(dfs) > 1 else 0.0
    if statistic == "max":
        return float(np.max(vals))
    if statistic == "last":
        return float(vals[-1])
    raise ValueError(f"unknown statistic {statistic!r}")


def verify_report(path) -> tuple[int, list[str]]:
    """Re-check every assertion and artifact digest recorded in a report."""
    path = Path(path)
    msgs = []
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        assertions = doc["assertions"]
        artifacts = doc["artifacts"]
    except (OSError, ValueError, KeyError) as exc:
        return EXIT_INVALID, [f"cannot read report: {exc}"]
    root = path.parent
    bad_files = False
    for rel, digest in sorted(artifacts.items()):
        f = root / rel
        if not f.is_file():
            msgs.append(f"missing artifact {rel}")
            bad_files = True
        elif _sha256(f) != digest:
            msgs.append(f"artifact {rel} does not match its recorded digest")
            bad_files = True
    if bad_files:
        return EXIT_INVALID, msgs
    failed = False
    for a in assertions:
        measured = a["measured"]
        src = a.get("source")
        if src:
            recomputed = _csv_statistic(root / src["csv"], src["statistic"])
            if not math.isclose(recomputed, measured, rel_tol=1e-12, abs_tol=1e-300):
                msgs.append(f"{a['name']}: stored {measured!r} but artifact gives {recomputed!r}")
                failed = True
            measured = recomputed
        ok = check(a["comparator"], measured, a["tolerance"])
        if ok != a["passed"]:
            msgs.append(f"{a['name']}: recorded pass flag {a['passed']} disagrees with re-check")
            failed = True
        if not ok:
            msgs.append(f"FAIL {a['name']}: {measured!r} {a['comparator']} {a['tolerance']!r}")
            failed = True
        else:
            msgs.append(f"PASS {a['name']}")
    if doc.get("status") == "solver-failure":
        return EXIT_SOLVER, msgs + ["report records a solver failure"]
    return (EXIT_ASSERT if failed else EXIT_OK), msgs


# ---------------------------------------------------------------- entry point


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the scenario described by a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the output directory")
    r.add_argument("--workers", type=int, help="override the worker count")
    sub.add_parser("print-defaults", help="print every config key with its default")
    v = sub.add_parser("verify", help="re-check a stored report against its artifacts")
    v.add_argument("report")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.cmd == "print-defaults":
        print(defaults_text())
        return EXIT_OK
    if args.cmd == "verify":
        code, msgs = verify_report(args.report)
        for m in msgs:
            print(m)
        return code
    try:
        cfg = parse_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers must be positive")
            cfg.workers = args.workers
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = run_scenario(cfg, args.output)
    for a in report.assertions:
        print(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']}: {a['measured']} {a['comparator']} {a['tolerance']}")
    if report.status == "solver-failure":
        print(f"error: {report.steps.get('solver_failure')}", file=sys.stderr)
    return report.exit_code()


if __name__ == "__main__":
    sys.exit(main())
