"""Experiment configuration: a flat TOML key/value file plus CLI overrides."""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .instances import CLASSES

EXPERIMENTS = ("solve", "rhi", "schauder", "sparse-bound", "iterate", "norms")

# class used when the config does not name one
DEFAULT_CLASS = {
    "solve": "smooth",
    "rhi": "checkerboard",
    "schauder": "holder",
    "sparse-bound": "holder",
    "iterate": "uniform-continuous",
    "norms": "constant",
}


@dataclass
class ExperimentConfig:
    experiment: str = "solve"
    seed: int = 0
    instances: int = 20
    n: int = 2
    m: int = 65
    lam: float = 1.0
    Lam: float = 4.0
    alpha: Optional[float] = None
    p: Optional[float] = None
    q: float = 2.25
    eps: float = 0.5
    coefficient_class: Optional[str] = None
    output_dir: str = "out"
    tol: float = 1e-10
    # experiment-specific knobs
    q_grid: list = field(default_factory=lambda: [2.1, 2.25, 2.4, 2.55, 2.7, 2.85, 3.0])
    m_local: int = 17
    depth: int = 3
    budget: int = 16
    variant: str = "lq"
    side: float = 1.0
    bc_smooth: float = 0.0
    pairing_kind: str = "both"
    ellipticity: str = "quadratic"
    workers: int = 1

    def __post_init__(self):
        if self.coefficient_class is None:
            self.coefficient_class = DEFAULT_CLASS.get(self.experiment, "smooth")

    def resolved(self) -> "ExperimentConfig":
        """Fill alpha/p from each other (p = n/(n + alpha)); defaults alpha = 0.5."""
        c = dataclasses.replace(self)
        if c.alpha is None and c.p is None:
            c.alpha = 0.5
        if c.p is None:
            c.p = c.n / (c.n + c.alpha)
        if c.alpha is None:
            c.alpha = c.n * (1.0 / c.p - 1.0)
        return c

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def validate(cfg: ExperimentConfig) -> list:
    """All problems with the configuration (empty when valid)."""
    bad = []
    if cfg.experiment not in EXPERIMENTS:
        bad.append(f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    if cfg.coefficient_class not in CLASSES:
        bad.append(f"coefficient_class must be one of {CLASSES}, got {cfg.coefficient_class!r}")
    if cfg.n not in (2, 3):
        bad.append(f"n must be 2 or 3, got {cfg.n}")
    if not isinstance(cfg.m, int) or cfg.m < 5 or cfg.m % 2 == 0:
        bad.append(f"m must be an odd integer >= 5, got {cfg.m}")
    if not isinstance(cfg.instances, int) or cfg.instances < 1:
        bad.append(f"instances must be a positive integer, got {cfg.instances}")
    if not (0 < cfg.lam <= cfg.Lam):
        bad.append(f"need 0 < lam <= Lam, got lam={cfg.lam}, Lam={cfg.Lam}")
    if not (0.0 < cfg.eps < 1.0):
        bad.append(f"eps must lie in (0, 1), got {cfg.eps}")
    if not (0.0 < cfg.tol <= 1e-4):
        bad.append(f"tol must lie in (0, 1e-4], got {cfg.tol}")
    n = cfg.n if cfg.n in (2, 3) else 2
    if cfg.alpha is not None and not (0.0 < cfg.alpha < 1.0):
        bad.append(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if cfg.p is not None and not (n / (n + 1) < cfg.p <= 1.0):
        bad.append(f"p must lie in ({n}/{n + 1}, 1], got {cfg.p}")
    if cfg.alpha is not None and cfg.p is not None and math.isfinite(cfg.alpha):
        if abs(cfg.p - n / (n + cfg.alpha)) > 1e-9:
            bad.append(f"p must equal n/(n + alpha) = {n / (n + cfg.alpha):.6g}, got {cfg.p}")
    if not cfg.q > 2:
        bad.append(f"q must exceed 2, got {cfg.q}")
    if not cfg.q_grid or any(not (x >= 1) for x in cfg.q_grid):
        bad.append("q_grid must be a non-empty list of exponents >= 1")
    if cfg.variant not in ("holder", "lq"):
        bad.append(f"variant must be 'holder' or 'lq', got {cfg.variant!r}")
    if cfg.m_local < 9 or cfg.m_local % 2 == 0:
        bad.append(f"m_local must be an odd integer >= 9, got {cfg.m_local}")
    if cfg.depth < 0:
        bad.append(f"depth must be non-negative, got {cfg.depth}")
    if cfg.budget < 1:
        bad.append(f"budget must be positive, got {cfg.budget}")
    if not cfg.side > 0:
        bad.append(f"side must be positive, got {cfg.side}")
    if cfg.pairing_kind not in ("z", "r", "both"):
        bad.append(f"pairing_kind must be z, r or both, got {cfg.pairing_kind!r}")
    if cfg.ellipticity not in ("quadratic", "spectrum"):
        bad.append(f"ellipticity must be 'quadratic' or 'spectrum', got {cfg.ellipticity!r}")
    if cfg.workers < 1:
        bad.append(f"workers must be positive, got {cfg.workers}")
    return bad


def _coerce(name: str, value: Any) -> Any:
    f = FIELDS[name]
    typ = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if value is None:
        return None
    if "list" in typ:
        if isinstance(value, str):
            return [float(v) for v in value.split(",") if v.strip()]
        return [float(v) for v in value]
    if typ.startswith("int"):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        return int(value) if isinstance(value, str) else value
    if "float" in typ:
        return float(value) if isinstance(value, (int, str)) and not isinstance(value, bool) else value
    return value


def build(values: dict) -> ExperimentConfig:
    """Config from a flat mapping; unknown keys and type errors are collected."""
    problems = []
    kw = {}
    for k, v in values.items():
        key = k.replace("-", "_")
        if key not in FIELDS:
            problems.append(f"unknown key {k!r}")
            continue
        try:
            kw[key] = _coerce(key, v)
        except (TypeError, ValueError):
            problems.append(f"bad value for {k!r}: {v!r}")
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(**kw)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load(path: Optional[str | Path], overrides: Optional[dict] = None,
         experiment: Optional[str] = None) -> ExperimentConfig:
    """Flat TOML values, then non-None overrides.

    With ``experiment`` given, a config file naming a different experiment is rejected.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"malformed config {path}: {exc}"]) from exc
        for k, v in list(values.items()):
            if isinstance(v, dict):
                raise ConfigError([f"nested table {k!r} not supported; use flat keys"])
        named = values.get("experiment")
        if experiment is not None and named is not None and named != experiment:
            raise ConfigError([f"config names experiment {named!r} but subcommand is {experiment!r}"])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build(values)
