"""Run directories: stages, artifacts, manifest, summary report, sweeps.

A run directory holds

    config.toml           canonical config
    field.cavfield        coefficient dump
    rung_XX.cavgrid       one dump per eps rung, solution.cavgrid = last
    solve_report.json     per-rung solver logs
    *.csv                 diagnostics; first line '# config_hash=<sha256>'
    summary.json          aggregated numbers
    manifest.json         hash, version, seeds, stage status, checksums
    timings.json          wall-clock per stage (kept out of the manifest so
                          that reruns produce identical manifests)
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .dumps import read_field, read_grid, write_field, write_grid
from .energy import GridFunction
from .field import CoefficientField, FieldError, boundary_data, generate_coefficients, make_grid
from .geometry import (GeometryError, analyze_solution, positivity_threshold,
                       sharp_interface_points)
from .klip import estimate_klip, gradient_up_to_fb
from .potential import get_profile
from .solver import (ContinuationError, ContinuationResult, EpsilonLadder, SolverError,
                     continuation)
from .twophase import DEFAULT_DELTA_STARS, analyze_twophase, minimize_twophase

log = logging.getLogger(__name__)

EXECUTION_ORDER = ("solve", "continue", "twophase", "analyze", "klip")
STAGE_CSVS = {
    "continue": ("rungs.csv",),
    "solve": ("rungs.csv",),
    "twophase": ("rungs.csv", "twophase_slopes.csv", "twophase_density.csv"),
    "analyze": ("growth.csv", "density.csv", "porosity.csv", "strips.csv", "nondegeneracy.csv"),
    "klip": ("klip.csv",),
}


class ReportError(RuntimeError):
    pass


class StageError(RuntimeError):
    """A stage failed; the run directory holds a manifest marking it."""

    def __init__(self, stage: str, cause: Exception, run_dir: Path):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.run_dir = run_dir


# --------------------------------------------------------------------------
# serialisation helpers

def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def dump_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, rows: Sequence[dict[str, Any]], config_hash: str,
              columns: Sequence[str] | None = None) -> None:
    cols = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _jsonable(r.get(k, "")) for k in cols})
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> tuple[str, list[dict[str, str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise ReportError(f"{path.name}: missing config hash line")
    h = lines[0].split("=", 1)[1]
    return h, list(csv.DictReader(lines[1:]))


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# run

@dataclass
class RunResult:
    run_dir: Path
    manifest: dict[str, Any]
    summary: dict[str, Any]
    converged: bool
    timings: dict[str, float] = dc_field(default_factory=dict)


def build_problem(cfg: ExperimentConfig):
    g = cfg["grid"]
    grid = make_grid(int(g["dim"]), int(g["nodes"]), float(g["length"]))
    f = cfg["field"]
    try:
        fld = generate_coefficients(grid, f["kind"], f["params"], int(f["seed"]))
    except FieldError as exc:
        raise ConfigError("field", str(exc)) from exc
    b = cfg["boundary"]
    try:
        bd = boundary_data(grid, b["trace"], float(b["amplitude"]), b["params"])
    except (FieldError, KeyError) as exc:
        raise ConfigError("boundary", str(exc)) from exc
    return grid, fld, bd


def medium_value(fld: CoefficientField, point) -> float:
    """Scalar medium value (a11) of the cell containing `point`."""
    g = fld.grid
    idx = tuple(int(min(max(np.floor(c / g.h), 0), g.n - 2)) for c in np.atleast_1d(point))
    return float(fld.a11[idx])


def _rung_rows(res: ContinuationResult) -> list[dict[str, Any]]:
    rows = []
    for j, (eps, rep) in enumerate(zip(res.eps, res.reports)):
        rows.append({
            "rung": j, "eps": eps, "converged": rep.converged, "iterations": rep.iterations,
            "energy": rep.final.total if rep.final else float("nan"),
            "residual": rep.residuals[-1] if rep.residuals else float("nan"),
            "min_value": rep.min_value, "sup_norm": rep.sup_norm,
            "sup_diff": res.sup_diffs[j - 1] if j > 0 and j - 1 < len(res.sup_diffs) else "",
            "sharp_energy": res.sharp_energies[j] if j < len(res.sharp_energies) else "",
            "holder_modulus": res.holder_moduli[j] if j < len(res.holder_moduli) else "",
        })
    return rows


class _Run:
    def __init__(self, cfg: ExperimentConfig, run_dir: Path):
        self.cfg = cfg
        self.dir = run_dir
        self.hash = cfg.hash
        self.stages: dict[str, str] = {s: "pending" for s in EXECUTION_ORDER if s in cfg.stages}
        self.timings: dict[str, float] = {}
        self.summary: dict[str, Any] = {"name": cfg["run"]["name"], "config_hash": self.hash}
        self.u: GridFunction | None = None
        self.eps_final: float | None = None
        self.geometry = None
        self.error: str | None = None

    def csv(self, name: str, rows, columns=None) -> None:
        write_csv(self.dir / name, rows, self.hash, columns)

    # --- stages ------------------------------------------------------------

    def _store_continuation(self, res: ContinuationResult) -> None:
        for j, u in enumerate(res.rungs):
            write_grid(self.dir / f"rung_{j:02d}.cavgrid", u)
        if res.rungs:
            write_grid(self.dir / "solution.cavgrid", res.u0)
        dump_json(self.dir / "solve_report.json", res.as_dict())
        self.csv("rungs.csv", _rung_rows(res),
                 ["rung", "eps", "converged", "iterations", "energy", "residual", "min_value",
                  "sup_norm", "sup_diff", "sharp_energy", "holder_modulus"])

    def _continuation(self, ladder: EpsilonLadder, options) -> ContinuationResult:
        try:
            res = continuation(self.fld, self.bd, self.profile, ladder, options)
        except ContinuationError as exc:
            self._store_continuation(exc.partial)
            raise
        self._store_continuation(res)
        return res

    def _record_solution(self, res: ContinuationResult) -> None:
        self.u = res.u0
        self.eps_final = res.eps[-1]
        u = res.u0
        self.summary["solve"] = {
            "eps": res.eps, "converged": res.converged, "min_u": float(u.values.min()),
            "sup_u": u.sup_norm(), "energy": res.reports[-1].final.total,
            "sharp_energy": res.sharp_energies[-1] if res.sharp_energies else None,
            "sharpening_ok": res.sharpening_ok, "holder_alpha": res.holder_alpha,
            "holder_bounded": res.holder_bounded, "starts": res.starts,
        }
        if self.profile.jump0 > 0:
            pts = sharp_interface_points(u, self.eps_final)
        else:
            pts = sharp_interface_points(u, 0.0)
        if u.grid.dim == 1:
            self.summary["solve"]["interface_points"] = sorted(float(p[0]) for p in pts)
        else:
            self.summary["solve"]["interface_point_count"] = int(len(pts))

    def stage_solve(self) -> None:
        lad = self.cfg.ladder()
        res = self._continuation(EpsilonLadder(lad.eps0, lad.ratio, 1), self.cfg.solve_options())
        self._record_solution(res)

    def stage_continue(self) -> None:
        res = self._continuation(self.cfg.ladder(), self.cfg.solve_options())
        self._record_solution(res)

    def stage_twophase(self) -> None:
        tp = self.cfg["twophase"]
        stars = tp.get("delta_stars", list(DEFAULT_DELTA_STARS))
        radii = tp.get("density_radii")
        if self.u is None:
            # the two-phase interface pins easily; search nearby positions unless configured
            solver = dict(self.cfg["solver"])
            solver.setdefault("interface_search", 8)
            try:
                u, rep = minimize_twophase(self.fld, self.bd, self.profile, self.cfg.ladder(),
                                           self.cfg.solve_options(**solver), stars, radii)
            except ContinuationError as exc:
                self._store_continuation(exc.partial)
                raise
            self._store_continuation(rep.continuation)
            self._record_solution(rep.continuation)
        else:
            rep = analyze_twophase(self.u, self.bd, stars, radii)
        self.summary["twophase"] = rep.summary()
        self.csv("twophase_slopes.csv",
                 [{**{f"x{i + 1}": c for i, c in enumerate(s.point)},
                   "a": medium_value(self.fld, s.point), "slope_plus": s.plus,
                   "slope_minus": s.minus, "ratio": s.ratio} for s in rep.slopes],
                 [f"x{i + 1}" for i in range(self.grid.dim)] + ["a", "slope_plus", "slope_minus", "ratio"])
        self.csv("twophase_density.csv", rep.densities,
                 [f"x{i + 1}" for i in range(self.grid.dim)] + ["r", "ratio", "fraction"])

    def stage_analyze(self) -> None:
        if self.u is None:
            raise ReportError("analyze needs a solution: add 'solve' or 'continue' to run.stages")
        an = self.cfg["analysis"]
        strip_radius = an.get("strip_radius")
        rep = analyze_solution(self.u, self.fld, tau=positivity_threshold(self.u, self.eps_final),
                               r_min=an.get("r_min"), r_max=float(an["r_max"]),
                               density_radii=an.get("density_radii"),
                               strip_radius=strip_radius, strip_mu0=an.get("strip_mu0"),
                               strip_halvings=int(an["strip_halvings"]),
                               max_points=an.get("max_points"))
        self.geometry = rep
        coords = [f"x{i + 1}" for i in range(self.grid.dim)]

        def with_a(rows):
            return [{**r, "a": medium_value(self.fld, [r[c] for c in coords])} for r in rows]

        self.csv("growth.csv", with_a([f.as_row() for f in rep.growth]),
                 coords + ["a", "exponent", "c_minus", "c_plus", "fit_residual"])
        self.csv("density.csv", with_a(rep.density), coords + ["a", "r", "theta"])
        self.csv("porosity.csv", with_a(rep.porosity),
                 coords + ["a", "r", "mu", "dimension_bound", "density_lower_bound"])
        self.csv("strips.csv", with_a(rep.strips),
                 coords + ["a", "r", "mu0", "measure_drift", "dirichlet_drift"])
        self.csv("nondegeneracy.csv", with_a(rep.nondegeneracy), coords + ["a", "c"])
        self.summary["geometry"] = rep.summary()

    def stage_klip(self) -> None:
        kc = self.cfg["klip"]
        rep = estimate_klip(self.fld, [float(s) for s in kc["scales"]], int(kc["samples"]),
                            int(kc["seed"]), kc.get("center"))
        self.csv("klip.csv", rep.rows(), ["scale", "sample", "ratio"])
        out: dict[str, Any] = {"estimate": rep.estimate, "center": list(rep.center),
                               "per_scale": {str(k): v for k, v in sorted(rep.per_scale().items())}}
        if self.u is not None and self.geometry is not None and self.geometry.growth:
            c_plus = max(f.c_plus for f in self.geometry.growth)
            gb = gradient_up_to_fb(self.u, rep.estimate, c_plus,
                                   tau=positivity_threshold(self.u, self.eps_final))
            out["gradient_bound"] = {"max_gradient": gb.max_gradient, "bound": gb.bound,
                                     "points": gb.points, "ok": gb.ok}
        self.summary["klip"] = out

    # --- driver ------------------------------------------------------------

    def run(self) -> bool:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.toml").write_text(self.cfg.to_toml())
        t0 = time.perf_counter()
        self.grid, self.fld, self.bd = build_problem(self.cfg)
        self.profile = get_profile(self.cfg["profile"]["name"])
        write_field(self.dir / "field.cavfield", self.fld)
        self.timings["setup"] = time.perf_counter() - t0
        ok = True
        for stage in list(self.stages):
            t0 = time.perf_counter()
            try:
                getattr(self, f"stage_{stage}")()
            except (SolverError, GeometryError, ReportError, ValueError) as exc:
                self.stages[stage] = "failed"
                self.error = f"{type(exc).__name__}: {exc}"
                self.timings[stage] = time.perf_counter() - t0
                for later in self.stages:
                    if self.stages[later] == "pending":
                        self.stages[later] = "skipped"
                self.finish()
                raise StageError(stage, exc, self.dir) from exc
            self.stages[stage] = "ok"
            self.timings[stage] = time.perf_counter() - t0
            if stage in ("solve", "continue", "twophase") and not self.summary.get("solve", {}).get("converged", True):
                ok = False
        self.finish()
        return ok

    def finish(self) -> None:
        dump_json(self.dir / "summary.json", self.summary)
        arts = sorted(p.name for p in self.dir.iterdir()
                      if p.is_file() and p.name not in ("manifest.json", "timings.json"))
        failed = [s for s, st in self.stages.items() if st == "failed"]
        manifest = {
            "config_hash": self.hash,
            "version": __version__,
            "name": self.cfg["run"]["name"],
            "seeds": {"field": int(self.cfg["field"]["seed"]), "klip": int(self.cfg["klip"]["seed"])},
            "stages": self.stages,
            "failed_stage": failed[0] if failed else None,
            "error": self.error,
            "artifacts": {name: sha256_file(self.dir / name) for name in arts},
        }
        dump_json(self.dir / "manifest.json", manifest)
        dump_json(self.dir / "timings.json", {k: round(v, 6) for k, v in self.timings.items()})
        self.manifest = manifest


def run_experiment(cfg: ExperimentConfig, run_dir) -> RunResult:
    """Execute the configured stages into `run_dir`.

    Raises ConfigError for invalid setups and StageError (with a manifest
    marking the failed stage already written) when a stage fails.
    """
    run = _Run(cfg, Path(run_dir))
    ok = run.run()
    return RunResult(run.dir, run.manifest, run.summary, ok, run.timings)


def verify_manifest(run_dir) -> list[str]:
    """Problems with a run directory: missing or altered artifacts."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        return ["manifest.json"]
    manifest = json.loads(mpath.read_text())
    problems = []
    for name, digest in manifest["artifacts"].items():
        p = run_dir / name
        if not p.exists():
            problems.append(f"{name} (missing)")
        elif sha256_file(p) != digest:
            problems.append(f"{name} (checksum mismatch)")
    return problems


def load_solution(run_dir) -> tuple[CoefficientField, GridFunction]:
    run_dir = Path(run_dir)
    return read_field(run_dir / "field.cavfield"), read_grid(run_dir / "solution.cavgrid")


# --------------------------------------------------------------------------
# report

def _float(x: str) -> float:
    try:
        return float(x)
    except (TypeError, ValueError):
        return float("nan")


def _histogram(values: Sequence[float], width: float = 0.05) -> list[tuple[float, float, int]]:
    if not values:
        return []
    lo = np.floor(min(values) / width) * width
    hi = np.ceil(max(values) / width) * width
    if hi <= lo:
        hi = lo + width
    edges = np.round(np.arange(lo, hi + width / 2, width), 10)
    counts, _ = np.histogram(values, edges)
    return [(float(a), float(b), int(c)) for a, b, c in zip(edges, edges[1:], counts)]


def report_table(run_dir) -> dict[str, Any]:
    """Summary of a completed run, FB rows grouped by the medium value."""
    run_dir = Path(run_dir)
    needed = ["manifest.json", "summary.json", "config.toml"]
    missing = [n for n in needed if not (run_dir / n).exists()]
    if missing:
        raise ReportError("missing artifacts: " + ", ".join(missing))
    manifest = json.loads((run_dir / "manifest.json").read_text())
    summary = json.loads((run_dir / "summary.json").read_text())
    stages = manifest["stages"]
    for stage, status in stages.items():
        if status == "ok":
            missing += [n for n in STAGE_CSVS.get(stage, ()) if not (run_dir / n).exists()]
    bad = [p for p in verify_manifest(run_dir) if p.split(" ")[0] not in missing]
    if missing or bad:
        raise ReportError("missing artifacts: " + ", ".join(missing + bad))
    out: dict[str, Any] = {"name": manifest["name"], "config_hash": manifest["config_hash"],
                           "stages": stages, "failed_stage": manifest["failed_stage"]}
    if "solve" in summary:
        s = summary["solve"]
        out["solve"] = {k: s.get(k) for k in ("eps", "converged", "min_u", "sharpening_ok",
                                              "holder_bounded", "interface_points") if k in s}
    geo = summary.get("geometry")
    if geo is not None:
        if geo.get("free_boundary") == "no free boundary":
            out["free_boundary"] = "no free boundary"
        else:
            _, growth = read_csv(run_dir / "growth.csv")
            _, dens = read_csv(run_dir / "density.csv")
            _, por = read_csv(run_dir / "porosity.csv")
            _, strips = read_csv(run_dir / "strips.csv")
            groups: dict[str, dict[str, Any]] = {}

            def grp(a):
                key = f"{_float(a):.6g}"
                return groups.setdefault(key, {"a": key, "points": 0})

            for r in growth:
                g = grp(r["a"])
                g["points"] += 1
                e, cm, cp = _float(r["exponent"]), _float(r["c_minus"]), _float(r["c_plus"])
                g["exponent_min"] = min(g.get("exponent_min", e), e)
                g["exponent_max"] = max(g.get("exponent_max", e), e)
                g["c_minus_min"] = min(g.get("c_minus_min", cm), cm)
                g["c_plus_max"] = max(g.get("c_plus_max", cp), cp)
            for r in dens:
                g, t = grp(r["a"]), _float(r["theta"])
                g["density_theta_min"] = min(g.get("density_theta_min", t), t)
            for r in por:
                g, m = grp(r["a"]), _float(r["mu"])
                g["porosity_mu_min"] = min(g.get("porosity_mu_min", m), m)
            for r in strips:
                g = grp(r["a"])
                for k in ("measure_drift", "dirichlet_drift"):
                    v = _float(r[k])
                    g[f"strip_{k}_max"] = max(g.get(f"strip_{k}_max", v), v)
            out["groups"] = [groups[k] for k in sorted(groups, key=float)]
            out["exponent_histogram"] = _histogram([_float(r["exponent"]) for r in growth])
            for k in ("box_dimension", "varsigma_est", "fb_cells"):
                if k in geo:
                    out[k] = geo[k]
            if geo.get("notes"):
                out["notes"] = geo["notes"]
    if "klip" in summary:
        out["klip_estimate"] = summary["klip"]["estimate"]
        if "gradient_bound" in summary["klip"]:
            out["gradient_bound"] = summary["klip"]["gradient_bound"]
    if "twophase" in summary:
        out["twophase"] = summary["twophase"]
    return out


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


GROUP_COLUMNS = ("a", "points", "c_minus_min", "c_plus_max", "exponent_min", "exponent_max",
                 "density_theta_min", "porosity_mu_min", "strip_measure_drift_max",
                 "strip_dirichlet_drift_max")


def format_report(table: dict[str, Any]) -> str:
    lines = [f"run {table['name']}  config {table['config_hash'][:16]}",
             "stages " + " ".join(f"{k}={table['stages'][k]}" for k in EXECUTION_ORDER
                                  if k in table["stages"])]
    if table.get("failed_stage"):
        lines.append(f"failed stage: {table['failed_stage']}")
    if "solve" in table:
        lines.append("solve " + " ".join(f"{k}={_fmt(v)}" for k, v in table["solve"].items()))
    if table.get("free_boundary") == "no free boundary":
        lines.append("no free boundary")
    if "groups" in table:
        lines.append("free boundary groups (by medium value a):")
        widths = [max(len(c), 10) for c in GROUP_COLUMNS]
        lines.append("  " + " ".join(f"{c:>{w}s}" for c, w in zip(GROUP_COLUMNS, widths)))
        for g in table["groups"]:
            lines.append("  " + " ".join(f"{_fmt(g.get(c, '-')):>{w}s}"
                                         for c, w in zip(GROUP_COLUMNS, widths)))
        hist = table["exponent_histogram"]
        if hist:
            lines.append(f"growth exponent histogram [{hist[0][0]:.2f}, {hist[-1][1]:.2f}]: "
                         + " ".join(f"[{a:.2f},{b:.2f}):{c}" for a, b, c in hist))
        for k in ("fb_cells", "box_dimension", "varsigma_est"):
            if k in table:
                lines.append(f"{k} {_fmt(table[k])}")
        for note in table.get("notes", []):
            lines.append(f"note: {note}")
    if "klip_estimate" in table:
        lines.append(f"K estimate {_fmt(table['klip_estimate'])}")
    if "gradient_bound" in table:
        lines.append("gradient bound " + _fmt(table["gradient_bound"]))
    if "twophase" in table:
        lines.append("two-phase " + " ".join(f"{k}={_fmt(v)}" for k, v in table["twophase"].items()))
    return "\n".join(lines) + "\n"


def report(run_dir) -> str:
    return format_report(report_table(run_dir))


# --------------------------------------------------------------------------
# sweep

def sweep(cfg: ExperimentConfig, out_dir) -> list[dict[str, Any]]:
    """Run every combination of [sweep] into out_dir/run_XXX; index in sweep.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (over, sub) in enumerate(cfg.expand_sweep()):
        run_dir = out_dir / f"run_{k:03d}"
        try:
            res = run_experiment(sub, run_dir)
            status = "ok" if res.converged else "not converged"
        except StageError as exc:
            status = f"failed: {exc.stage}"
        rows.append({"run": run_dir.name, "config_hash": sub.hash,
                     "overrides": json.dumps(over, sort_keys=True), "status": status})
    write_csv(out_dir / "sweep.csv", rows, cfg.hash, ["run", "config_hash", "overrides", "status"])
    return rows
