"""Run configuration: dataclasses, a key=value file format, overrides.

The file format is one ``dotted.key = value`` pair per line; ``#`` starts
a comment. Every field has a default, so an empty config is valid and
``format_config(RunConfig())`` prints the full default set.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, is_dataclass

from .combiner import HyperParams
from .forecasters import IN_REPO_METHODS


class ConfigError(ValueError):
    """Raised on unknown keys, bad values, or missing files."""


@dataclass
class RpConfig:
    eps: float = 0.1
    steps: int = 5
    size: int = 128


@dataclass
class SiftConfig:
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    scales_per_octave: int = 3
    sigma0: float = 1.6
    init_sigma: float = 0.5


@dataclass
class CodebookConfig:
    k: int = 200
    pool_cap: int = 200_000
    max_iters: int = 100
    tol: float = 1e-4


@dataclass
class LlcConfig:
    knn: int = 5
    lam: float = math.exp(-4.0)


@dataclass
class CombinerConfig:
    max_depth: int = 8
    learning_rate: float = 0.05
    subsample_rows: float = 0.9
    subsample_cols: float = 0.9
    rounds: int = 100
    cv_budget: int = 0  # 0 = skip the search, use the values above
    cv_folds: int = 10
    per_group: bool = True  # one model per frequency group vs one overall

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            max_depth=self.max_depth,
            learning_rate=self.learning_rate,
            subsample_rows=self.subsample_rows,
            subsample_cols=self.subsample_cols,
            rounds=self.rounds,
        )


@dataclass
class RunConfig:
    corpus: str = ""
    metadata: str = ""
    work_dir: str = "work"
    pool: tuple = IN_REPO_METHODS
    external_forecasts: tuple = ()
    default_period: int = 1
    default_horizon: int = 6
    seed: int = 0
    threads: int = 1
    image_format: str = "pgm"  # for the plot subcommand: pgm or png
    rp: RpConfig = field(default_factory=RpConfig)
    sift: SiftConfig = field(default_factory=SiftConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    llc: LlcConfig = field(default_factory=LlcConfig)
    combiner: CombinerConfig = field(default_factory=CombinerConfig)


def _flatten(obj, prefix: str = "") -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            out.update(_flatten(value, prefix=f"{key}."))
        else:
            out[key] = value
    return out


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(key: str, template, raw: str):
    raw = raw.strip()
    if isinstance(template, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(template, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(template, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(template, tuple):
        if raw == "":
            return ()
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


def _set_dotted(cfg: RunConfig, key: str, raw: str) -> None:
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part) or not is_dataclass(getattr(target, part)):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, part)
    name = parts[-1]
    valid = {f.name for f in fields(target)}
    if name not in valid or is_dataclass(getattr(target, name)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(key, getattr(target, name), raw))


def format_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config`` round-trips it."""
    lines = [f"{key} = {_format_value(value)}" for key, value in _flatten(cfg).items()]
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        _set_dotted(cfg, key.strip(), raw)
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` strings (CLI ``--set``) on top of a config."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, _, raw = item.partition("=")
        _set_dotted(cfg, key.strip(), raw)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check numeric ranges and that every referenced input path exists."""
    for key, path in [("corpus", cfg.corpus), ("metadata", cfg.metadata)] + [
        ("external_forecasts", p) for p in cfg.external_forecasts
    ]:
        if path and not os.path.exists(path):
            raise ConfigError(f"{key}: file not found: {path}")

    def positive(key, v):
        if not v > 0:
            raise ConfigError(f"{key} must be positive, got {v}")

    positive("rp.eps", cfg.rp.eps)
    if cfg.rp.steps < 1:
        raise ConfigError(f"rp.steps must be >= 1, got {cfg.rp.steps}")
    if cfg.rp.size < 2:
        raise ConfigError(f"rp.size must be >= 2, got {cfg.rp.size}")
    positive("sift.contrast_threshold", cfg.sift.contrast_threshold)
    if cfg.sift.edge_ratio < 1:
        raise ConfigError("sift.edge_ratio must be >= 1")
    if cfg.sift.scales_per_octave < 3:
        raise ConfigError("sift.scales_per_octave must be >= 3")
    if cfg.sift.sigma0 <= cfg.sift.init_sigma:
        raise ConfigError("sift.sigma0 must exceed sift.init_sigma")
    if cfg.codebook.k < 1:
        raise ConfigError("codebook.k must be >= 1")
    if cfg.codebook.pool_cap < cfg.codebook.k:
        raise ConfigError("codebook.pool_cap must be >= codebook.k")
    if cfg.codebook.max_iters < 1:
        raise ConfigError("codebook.max_iters must be >= 1")
    positive("codebook.tol", cfg.codebook.tol)
    if cfg.llc.knn < 1:
        raise ConfigError("llc.knn must be >= 1")
    positive("llc.lam", cfg.llc.lam)
    try:
        cfg.combiner.hyperparams()  # range checks live in HyperParams
    except ValueError as exc:
        raise ConfigError(f"combiner: {exc}") from None
    if cfg.combiner.cv_budget < 0:
        raise ConfigError("combiner.cv_budget must be >= 0")
    if cfg.combiner.cv_folds < 2:
        raise ConfigError("combiner.cv_folds must be >= 2")
    if cfg.default_period < 1:
        raise ConfigError("default_period must be >= 1")
    if cfg.default_horizon < 1:
        raise ConfigError("default_horizon must be >= 1")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if not cfg.pool:
        raise ConfigError("pool must name at least one method")
    if cfg.image_format not in ("pgm", "png"):
        raise ConfigError("image_format must be pgm or png")


__all__ = [
    "ConfigError",
    "RpConfig",
    "SiftConfig",
    "CodebookConfig",
    "LlcConfig",
    "CombinerConfig",
    "RunConfig",
    "format_config",
    "parse_config",
    "load_config",
    "apply_overrides",
    "validate",
]
