"""Run configurations for the sweep experiments.

Each experiment has a dataclass of parameters with desk-scale defaults.
Values come from (lowest to highest priority) the defaults, an INI file
section named after the experiment, and ``key=value`` overrides given on the
command line.  Grids are written either as comma lists (``0.1,0.2,0.4``) or
as ``start:stop:num`` linspace triples.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed or out-of-domain configuration values."""


def _linspace(start, stop, num):
    return tuple(float(v) for v in np.round(np.linspace(start, stop, num), 12))


def parse_grid(text: str, cast=float) -> tuple:
    text = text.strip()
    if not text:
        raise ConfigError("empty grid")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid range must be start:stop:num, got {text!r}")
        try:
            start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"bad grid range {text!r}") from exc
        if num < 1:
            raise ConfigError("grid needs at least one point")
        vals = _linspace(start, stop, num)
        return tuple(cast(v) for v in vals)
    try:
        return tuple(cast(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}") from exc


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class PhaseDiagramConfig:
    d: int = 120
    beta: float = 30.0
    lam: float = 1e-6
    r_grid: tuple = _linspace(0.05, 0.5, 10)
    alpha_grid: tuple = _linspace(0.08, 0.8, 10)
    loss_threshold: float = 0.05
    grad_tol: float = 1e-3
    max_iters: int = 3000
    precision: str = "float32"
    full_scale: bool = False

    def effective_d(self) -> int:
        return 400 if self.full_scale else self.d

    def validate(self):
        _check_grid("r_grid", self.r_grid, 0.0, 1.0)
        _check_grid("alpha_grid", self.alpha_grid, 0.0, math.inf)
        _common_solver(self)
        if not 0 < self.loss_threshold:
            raise ConfigError("loss_threshold must be positive")


@dataclass
class SliceConfig:
    d: int = 200
    r: float = 0.15
    beta: float = 30.0
    lam: float = 1e-7
    alpha_grid: tuple = _linspace(0.16, 0.40, 7)
    profile_alpha: float = 0.28
    loss_threshold: float = 0.05
    # W = 0 starts with |grad| / |Psi| ~ 1 / sqrt(n); 1e-3 can stop on the
    # initial plateau once n exceeds ~10^4
    grad_tol: float = 5e-4
    max_iters: int = 3000
    precision: str = "float32"
    full_scale: bool = False

    def effective_d(self) -> int:
        return 600 if self.full_scale else self.d

    def validate(self):
        _check_grid("alpha_grid", self.alpha_grid, 0.0, math.inf)
        if not 0 < self.r < 1:
            raise ConfigError("r must lie in (0, 1)")
        if not self.profile_alpha > 0:
            raise ConfigError("profile_alpha must be positive")
        _common_solver(self)


@dataclass
class CmmThresholdConfig:
    n: int = 1000
    rho_grid: tuple = (4.0, 6.0, 8.0, 12.0, 16.0)
    trials: int = 50

    def validate(self):
        if self.n < 3:
            raise ConfigError("n must be at least 3")
        _check_grid("rho_grid", self.rho_grid, 0.0, math.inf)
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")


@dataclass
class Top1Config:
    dims: tuple = (40, 60, 80)
    c_grid: tuple = _linspace(0.55, 1.2, 27)
    lam: float = 1e-4
    reps: int = 4
    grad_tol: float = 1e-6
    max_iters: int = 5000
    precision: str = "float64"

    def validate(self):
        if not self.dims or any(d < 2 for d in self.dims):
            raise ConfigError("dims must be a nonempty list of integers >= 2")
        _check_grid("c_grid", self.c_grid, 0.0, math.inf)
        if len(self.c_grid) < 3:
            raise ConfigError("c_grid needs at least three points to locate a peak")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        _common_solver(self)


EXPERIMENTS = {
    "phase-diagram": PhaseDiagramConfig,
    "slice": SliceConfig,
    "cmm-threshold": CmmThresholdConfig,
    "top1-sweep": Top1Config,
}

_INT_GRIDS = {"dims"}


def _check_grid(name, grid, lo, hi):
    if not grid:
        raise ConfigError(f"{name} must be nonempty")
    for v in grid:
        if not (lo < v < hi):
            raise ConfigError(f"{name} value {v} outside ({lo}, {hi})")


def _common_solver(cfg):
    if getattr(cfg, "d", 2) < 2:
        raise ConfigError("d must be at least 2")
    if hasattr(cfg, "beta") and not cfg.beta > 0:
        raise ConfigError("beta must be positive")
    if not cfg.lam > 0:
        raise ConfigError("lam must be positive")
    if not cfg.grad_tol > 0:
        raise ConfigError("grad_tol must be positive")
    if cfg.max_iters < 1:
        raise ConfigError("max_iters must be at least 1")
    if cfg.precision not in ("float32", "float64"):
        raise ConfigError("precision must be float32 or float64")


@dataclass
class RunConfig:
    experiment: str
    params: object
    seed: int = 0
    workers: int = 1
    out: str = "runs/out"
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        self.params.validate()
        return self

    def resolved_text(self) -> str:
        """INI rendering of the resolved configuration, echoed next to outputs."""
        cp = configparser.ConfigParser()
        cp["run"] = {"experiment": self.experiment, "seed": str(self.seed),
                     "workers": str(self.workers)}
        cp[self.experiment] = {f.name: format_value(getattr(self.params, f.name))
                               for f in fields(self.params)}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
            lines.append("")
        return "\n".join(lines)


def _coerce(name: str, default, text: str):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            return parse_grid(text, int if name in _INT_GRIDS else float)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name}={text!r}") from exc


def apply_overrides(params, items: dict):
    known = {f.name: f for f in fields(params)}
    updates = {}
    for key, text in items.items():
        key = key.strip().replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {type(params).__name__}")
        updates[key] = _coerce(key, getattr(params, key), text)
    return dataclasses.replace(params, **updates)


def load_config(experiment: str, path: str | None = None, overrides=(), seed=None,
                workers=None, out=None) -> RunConfig:
    """Resolve defaults, the INI file and ``key=value`` overrides into a RunConfig."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    params = EXPERIMENTS[experiment]()
    run = {"seed": 0, "workers": 1, "out": f"runs/{experiment}"}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if cp.has_section("run"):
            for key, val in cp["run"].items():
                if key not in run and key != "experiment":
                    raise ConfigError(f"unknown run key {key!r}")
                if key != "experiment":
                    run[key] = val
        if cp.has_section(experiment):
            params = apply_overrides(params, dict(cp[experiment]))
    parsed = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        parsed[k] = v
    params = apply_overrides(params, parsed)
    if seed is not None:
        run["seed"] = seed
    if workers is not None:
        run["workers"] = workers
    if out is not None:
        run["out"] = out
    try:
        cfg = RunConfig(experiment, params, int(run["seed"]), int(run["workers"]), str(run["out"]))
    except ValueError as exc:
        raise ConfigError(f"bad run section: {exc}") from exc
    return cfg.validate()
