"""Command line: cavlab {solve,continue,analyze,klip,twophase,report,sweep}.

Exit codes: 0 all stages converged, 2 validation error, 3 solver
non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, set_dotted, tomllib
from .experiment import ReportError, StageError, report, report_table, run_experiment, sweep
from .solver import SolverError

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3

STAGE_SETS = {
    "solve": ["solve"],
    "continue": ["continue"],
    "analyze": ["continue", "analyze"],
    "klip": ["klip"],
    "twophase": ["twophase"],
}


def _parse_value(text: str):
    """TOML literal if it parses as one, else the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path: str, overrides: list[str], stages: list[str] | None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("<config>", f"no such file {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<toml>", str(exc)) from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_dotted(raw, key.strip(), _parse_value(value.strip()))
    if stages is not None:
        run = raw.setdefault("run", {})
        # keep configured diagnostics that the command's stages can feed
        extra = [s for s in run.get("stages", []) if s in ("analyze", "klip") and s not in stages]
        run["stages"] = stages + (extra if stages != ["klip"] else [])
    return ExperimentConfig.from_dict(raw)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path("runs") / cfg["run"]["name"]


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set, STAGE_SETS[args.command])
    out = _out_dir(args, cfg)
    try:
        res = run_experiment(cfg, out)
    except StageError as exc:
        print(f"error: {exc} (partial run in {exc.run_dir})", file=sys.stderr)
        return EXIT_NONCONVERGED if isinstance(exc.cause, SolverError) else EXIT_INVALID
    print(report(res.run_dir), end="")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_report(args) -> int:
    if args.json:
        print(json.dumps(report_table(args.run_dir), indent=2, sort_keys=True))
    else:
        print(report(args.run_dir), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set, None)
    rows = sweep(cfg, _out_dir(args, cfg))
    for r in rows:
        print(f"{r['run']}  {r['status']:<16s} {r['overrides']}")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_NONCONVERGED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "single-eps minimisation at the first rung"),
                        ("continue", "eps continuation down the configured ladder"),
                        ("analyze", "continuation followed by free-boundary diagnostics"),
                        ("klip", "sampled K-Lip constant of the medium"),
                        ("twophase", "signed-data continuation and two-phase diagnostics"),
                        ("sweep", "Cartesian product over the [sweep] table")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", help="run directory (default runs/<run.name>)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. grid.nodes=257")
        p.set_defaults(func=cmd_sweep if name == "sweep" else cmd_run)
    p = sub.add_parser("report", help="summary table of a completed run")
    p.add_argument("run_dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
