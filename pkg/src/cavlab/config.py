"""Experiment configuration: TOML text, canonical form, hash, validation.

A config is a nested table with the sections

    [run]       name, stages
    [grid]      dim, nodes, length
    [field]     kind, seed, [field.params]
    [boundary]  trace, amplitude, [boundary.params]
    [profile]   name
    [ladder]    eps0, ratio and either count or eps_final
    [solver]    any SolveOptions field
    [analysis]  geometry diagnostics (radii, strip schedule, ...)
    [klip]      scales, samples, seed
    [twophase]  delta_stars, density_radii
    [sweep]     dotted key -> list of values (sweep command only)

The canonical form is the TOML serialisation with sorted keys; its
sha256 is the config hash written into manifests and CSVs.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import itertools
import sys
from pathlib import Path
from typing import Any, Iterator, Mapping

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .field import KINDS, TRACES
from .potential import PROFILES
from .solver import LINEAR_SOLVERS, EpsilonLadder, SolveOptions

STAGES = ("solve", "continue", "analyze", "klip", "twophase")

DEFAULTS: dict[str, Any] = {
    "run": {"name": "run", "stages": ["continue", "analyze"]},
    "grid": {"dim": 1, "nodes": 1025, "length": 1.0},
    "field": {"kind": "constant", "seed": 0, "params": {}},
    "boundary": {"trace": "endpoints", "amplitude": 1.0, "params": {}},
    "profile": {"name": "indicator"},
    "ladder": {"eps0": 0.1, "ratio": 0.5},
    "solver": {},
    "analysis": {"r_max": 0.125, "max_points": 200, "strip_halvings": 3},
    "klip": {"samples": 16, "seed": 0},
    "twophase": {},
}

_SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolveOptions)}


class ConfigError(ValueError):
    """Validation failure; `path` names the offending key (dotted)."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _merge(base: Mapping[str, Any], over: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _sorted(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _sorted(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_sorted(v) for v in obj]
    return obj


@dataclasses.dataclass
class ExperimentConfig:
    data: dict[str, Any]

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        unknown = set(raw) - set(DEFAULTS) - {"sweep"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        cfg = cls(_sorted(_merge(DEFAULTS, raw)))
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<toml>", str(exc)) from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_toml(Path(path).read_text())

    def to_toml(self) -> str:
        return tomli_w.dumps(_sorted(self.data))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    # --- typed views -------------------------------------------------------

    @property
    def stages(self) -> list[str]:
        return list(self.data["run"]["stages"])

    def solve_options(self, **overrides) -> SolveOptions:
        return SolveOptions(**{**self.data["solver"], **overrides})

    def ladder(self) -> EpsilonLadder:
        lad = self.data["ladder"]
        eps0, ratio = float(lad["eps0"]), float(lad["ratio"])
        if "count" in lad:
            return EpsilonLadder(eps0, ratio, int(lad["count"]))
        return EpsilonLadder.from_range(eps0, float(lad["eps_final"]), ratio)

    # --- validation --------------------------------------------------------

    def validate(self) -> None:
        d = self.data
        run = d["run"]
        if not isinstance(run.get("stages"), list) or not run["stages"]:
            raise ConfigError("run.stages", "must be a non-empty list")
        for s in run["stages"]:
            if s not in STAGES:
                raise ConfigError("run.stages", f"unknown stage {s!r}; expected one of {STAGES}")

        g = d["grid"]
        if g["dim"] not in (1, 2):
            raise ConfigError("grid.dim", f"must be 1 or 2, got {g['dim']!r}")
        if not isinstance(g["nodes"], int) or g["nodes"] < 3:
            raise ConfigError("grid.nodes", f"must be an integer >= 3, got {g['nodes']!r}")
        if not float(g["length"]) > 0:
            raise ConfigError("grid.length", "must be positive")

        f = d["field"]
        if f["kind"] not in KINDS:
            raise ConfigError("field.kind", f"unknown kind {f['kind']!r}; expected one of {KINDS}")
        if not isinstance(f["seed"], int) or f["seed"] < 0:
            raise ConfigError("field.seed", "must be a nonnegative integer")
        p = f["params"]
        if "lam" in p and "Lam" in p and not 0 < float(p["lam"]) <= float(p["Lam"]):
            raise ConfigError("field.params.lam",
                              f"need 0 < lam <= Lam, got lam={p['lam']}, Lam={p['Lam']}")
        for k in ("lam", "Lam", "a", "a11", "a22"):
            if k in p and not float(p[k]) > 0:
                raise ConfigError(f"field.params.{k}", "must be positive")

        b = d["boundary"]
        if b["trace"] not in TRACES:
            raise ConfigError("boundary.trace", f"unknown trace {b['trace']!r}; expected one of {TRACES}")
        if b["trace"] == "endpoints" and g["dim"] != 1:
            raise ConfigError("boundary.trace", "'endpoints' is 1D only")
        if b["trace"] == "radial" and not float(b["params"].get("r0", 0)) > 0:
            raise ConfigError("boundary.params.r0", "radial trace needs r0 > 0")

        if d["profile"]["name"] not in PROFILES:
            raise ConfigError("profile.name", f"unknown profile; expected one of {sorted(PROFILES)}")

        lad = d["ladder"]
        if not float(lad["eps0"]) > 0:
            raise ConfigError("ladder.eps0", "must be positive")
        if not 0 < float(lad["ratio"]) < 1:
            raise ConfigError("ladder.ratio", "must lie in (0, 1)")
        if ("count" in lad) == ("eps_final" in lad):
            raise ConfigError("ladder", "give exactly one of count / eps_final")
        if "count" in lad and (not isinstance(lad["count"], int) or lad["count"] < 1):
            raise ConfigError("ladder.count", "must be a positive integer")
        if "eps_final" in lad and not 0 < float(lad["eps_final"]) <= float(lad["eps0"]):
            raise ConfigError("ladder.eps_final", "must lie in (0, eps0]")

        for k in d["solver"]:
            if k not in _SOLVER_FIELDS:
                raise ConfigError(f"solver.{k}", f"unknown option; expected one of {sorted(_SOLVER_FIELDS)}")
        if d["solver"].get("linear_solver", "direct") not in LINEAR_SOLVERS:
            raise ConfigError("solver.linear_solver", f"expected one of {LINEAR_SOLVERS}")
        try:
            self.ladder()
        except ValueError as exc:
            raise ConfigError("ladder", str(exc)) from exc
        try:
            self.solve_options()
        except (TypeError, ValueError) as exc:
            raise ConfigError("solver", str(exc)) from exc

        if "klip" in run["stages"] and not d["klip"].get("scales"):
            raise ConfigError("klip.scales", "the klip stage needs a list of ball radii")
        for k, v in d.get("sweep", {}).items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sweep.{k}", "must be a non-empty list")

    # --- sweeps ------------------------------------------------------------

    def expand_sweep(self) -> Iterator[tuple[dict[str, Any], "ExperimentConfig"]]:
        """Cartesian product over [sweep]; yields (overrides, config)."""
        sweep = self.data.get("sweep", {})
        base = {k: v for k, v in self.data.items() if k != "sweep"}
        keys = sorted(sweep)
        for combo in itertools.product(*(sweep[k] for k in keys)):
            over = dict(zip(keys, combo))
            data = copy.deepcopy(base)
            for dotted, value in over.items():
                set_dotted(data, dotted, value)
            yield over, ExperimentConfig.from_dict(data)


def set_dotted(data: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "path runs through a non-table value")
    node[parts[-1]] = value
