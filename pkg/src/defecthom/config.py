"""Experiment configuration: TOML files, fail-closed validation, stable hashing.

Schema (every key optional unless noted; unknown keys are errors)::

    kind = "cell"              # cell | defect-corrector | norm-sweep | nondiv-pipeline
                               # | green | twoscale | counterexample   (required)
    seed = 0
    output = "results"
    q_list = [2.0]
    t_grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    eps_list = [0.125, 0.0625]

    [grid]
    d = 2
    n = 32                     # nodes per unit length
    L = 4                      # box half-width (box kinds)

    [coefficient]
    periodic = "laminate"      # identity | constant | laminate | trig
    scale = 1.0                # identity
    matrix = [[2.0, 0.0], [0.0, 1.0]]          # constant, and constant part of trig
    laminate = [[2.0, 1.0], [2.0, 1.0]]        # (constant, sine amplitude) per axis
    axis = 0                                   # laminate direction
    terms = [{i = 0, j = 0, amp = 0.5, k = [1, 0], kind = "sin"}]   # trig
    r = 2.0
    mu_min = 0.001
    mu_max = 1000.0

    [coefficient.defect]
    kind = "compact-bump"      # none | gaussian | compact-bump | algebraic
    amplitude = 0.5            # scalar or matrix
    width = 1.0
    s = 0.0
    center = [0.0, 0.0]

    [tolerances]               # positive numbers, names per experiment kind
    [options]                  # experiment-specific settings
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .coeff import CoefficientModel, DefectSpec, PeriodicSpec, TrigTerm
from .field import GridSpec

__all__ = ["ConfigError", "ExperimentConfig", "KINDS", "load_config", "parse_config",
           "config_hash", "DEFAULT_TOLERANCES", "DEFAULT_OPTIONS"]

KINDS = ("cell", "defect-corrector", "norm-sweep", "nondiv-pipeline", "green", "twoscale",
         "counterexample")

_TOP = {"kind", "seed", "output", "q_list", "t_grid", "eps_list", "grid", "coefficient",
        "tolerances", "options"}
_GRID = {"d", "n", "L"}
_COEF = {"periodic", "scale", "matrix", "laminate", "axis", "terms", "r", "alpha", "mu_min",
         "mu_max", "defect"}
_DEFECT = {"kind", "amplitude", "width", "s", "center"}
_TERM = {"i", "j", "amp", "k", "kind"}

DEFAULT_TOLERANCES: dict[str, dict[str, float]] = {
    "cell": {"a_star": 1e-3, "residual": 1e-8, "m_mean": 1e-12},
    "defect-corrector": {"truncation_gap": 0.02, "residual": 1e-8},
    "norm-sweep": {"max_over_min": 10.0},
    "nondiv-pipeline": {"div_A_per": 1e-8, "gap": 1e-2},
    "green": {"slope": 0.15, "oracle_slope": 0.05, "doubling": 0.05},
    "twoscale": {"min_rate": 0.45},
    "counterexample": {"far_field": 0.05, "l1_shell": 0.10},
}

DEFAULT_OPTIONS: dict[str, dict[str, Any]] = {
    "cell": {"expected_a_star": None, "invariant_measure": True},
    "defect-corrector": {"audit": True},
    "norm-sweep": {"probe_count": 20},
    "nondiv-pipeline": {"n_cell": 16, "box_L": 4, "f": "bump"},
    "green": {"coefficient": "laplace", "richardson": None, "mixed": True},
    "twoscale": {"n_cell": 16, "box_L": 8, "f": "exp", "local_radius": 2.0,
                 "defect_center": None},
    "counterexample": {"subsample": 8},
}

_DEFAULT_GRID = {
    "cell": {"d": 2, "n": 64, "L": 1},
    "defect-corrector": {"d": 2, "n": 16, "L": 8},
    "norm-sweep": {"d": 2, "n": 16, "L": 4},
    "nondiv-pipeline": {"d": 2, "n": 16, "L": 4},
    "green": {"d": 3, "n": 8, "L": 32},
    "twoscale": {"d": 2, "n": 16, "L": 1},
    "counterexample": {"d": 3, "n": 8, "L": 64},
}


class ConfigError(ValueError):
    """Invalid configuration (reported before any solve)."""


@dataclass
class ExperimentConfig:
    kind: str
    grid: GridSpec
    model: CoefficientModel
    q_list: list = field(default_factory=lambda: [2.0])
    t_grid: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    eps_list: list = field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: str = "results"
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def _unknown(section: str, got, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _num_list(name: str, v) -> list:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{name} must be a nonempty list")
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must hold numbers") from exc


def _periodic(c: dict, d: int) -> PeriodicSpec:
    kind = c.get("periodic", "identity")
    if kind == "identity":
        return PeriodicSpec.identity(d, float(c.get("scale", 1.0)))
    if kind == "constant":
        return PeriodicSpec.constant_matrix(c["matrix"])
    if kind == "laminate":
        pairs = [tuple(map(float, p)) for p in c.get("laminate", [[2.0, 1.0]] * d)]
        return PeriodicSpec.laminate(d, pairs, int(c.get("axis", 0)))
    if kind == "trig":
        terms = []
        for t in c.get("terms", []):
            _unknown("coefficient.terms", t, _TERM)
            terms.append(TrigTerm(int(t["i"]), int(t["j"]), float(t["amp"]),
                                  tuple(int(v) for v in t["k"]), t.get("kind", "sin")))
        const = c.get("matrix", [[float(i == j) for j in range(d)] for i in range(d)])
        return PeriodicSpec(tuple(tuple(map(float, r)) for r in const), tuple(terms))
    raise ConfigError(f"unknown periodic coefficient {kind!r}")


def _defect(c: dict | None) -> DefectSpec:
    if not c:
        return DefectSpec()
    _unknown("coefficient.defect", c, _DEFECT)
    amp = c.get("amplitude", 0.0)
    amp = tuple(tuple(map(float, r)) for r in amp) if isinstance(amp, list) else float(amp)
    center = c.get("center")
    return DefectSpec(c.get("kind", "none"), amp, float(c.get("width", 1.0)),
                      float(c.get("s", 0.0)),
                      None if center is None else tuple(map(float, center)))


def parse_config(raw: dict, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a configuration mapping.

    ``kind`` fills in (or must agree with) the file's kind; ``seed`` overrides.

    Raises
    ------
    ConfigError
        On unknown keys, empty lists, non-positive tolerances or invalid
        grids and coefficients.
    """
    raw = dict(raw)
    _unknown("top level", raw, _TOP)
    k = raw.get("kind", kind)
    if kind is not None and k != kind:
        raise ConfigError(f"config kind {k!r} does not match subcommand {kind!r}")
    if k not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {k!r}")
    raw["kind"] = k
    if seed is not None:
        raw["seed"] = int(seed)
    g = dict(_DEFAULT_GRID[k])
    g.update(raw.get("grid", {}))
    _unknown("grid", raw.get("grid", {}), _GRID)
    c = raw.get("coefficient", {})
    _unknown("coefficient", c, _COEF)
    tol = dict(DEFAULT_TOLERANCES[k])
    _unknown("tolerances", raw.get("tolerances", {}), tol)
    tol.update(raw.get("tolerances", {}))
    for name, v in tol.items():
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"tolerance {name} must be positive")
    opts = dict(DEFAULT_OPTIONS[k])
    _unknown("options", raw.get("options", {}), opts)
    opts.update(raw.get("options", {}))
    try:
        grid_kind = "cell" if k == "cell" else ("domain" if k == "twoscale" else "box")
        grid = GridSpec(int(g["d"]), int(g["n"]), 1 if grid_kind != "box" else g["L"], grid_kind)
        model = CoefficientModel(_periodic(c, grid.d), _defect(c.get("defect")),
                                 r=float(c.get("r", 2.0)), alpha=float(c.get("alpha", 1.0)),
                                 mu_min=float(c.get("mu_min", 1e-3)),
                                 mu_max=float(c.get("mu_max", 1e3)))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if model.d != grid.d:
        raise ConfigError(f"coefficient dimension {model.d} does not match grid d={grid.d}")
    cfg = ExperimentConfig(k, grid, model, seed=int(raw.get("seed", 0)), tolerances=tol,
                           options=opts, output=str(raw.get("output", "results")), raw=raw)
    for name in ("q_list", "t_grid", "eps_list"):
        if name in raw:
            setattr(cfg, name, _num_list(name, raw[name]))
    if any(q < 1 for q in cfg.q_list):
        raise ConfigError("q_list entries must be >= 1")
    if any(not (0 < e <= 1) for e in cfg.eps_list):
        raise ConfigError("eps_list entries must lie in (0, 1]")
    return cfg


def load_config(path, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Read and validate a TOML configuration file."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, kind, seed)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
