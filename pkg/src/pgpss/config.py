"""Simulation configuration: key=value settings from a file or the command line."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MIB = 1024 * 1024
DEFAULT_CONFIG_FILE = "simulate.config"
LOG_PREFIX = "log."


class ConfigError(ValueError):
    """Unknown key, malformed value or violated config invariant."""


@dataclass(frozen=True)
class Config:
    config_file: str = DEFAULT_CONFIG_FILE
    default_tc: int | None = None
    lpcc_enabled: bool = True
    lpcc_cluster_number: int = 1000
    lpcc_update_interval: float = 10.0
    parse_model_only: bool = False
    log_config_details: bool = False
    memory_budget_bytes: int = 64 * MIB
    memory_limit1: int = 5 * MIB
    memory_limit2: int = 1 * MIB
    cancelback_batch: int = 25
    rng_seed: int = 0
    deterministic: bool = True
    log_levels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lpcc_update_interval <= 0:
            raise ConfigError("LpccUpdateInterval must be positive")
        if not self.memory_limit2 < self.memory_limit1 < self.memory_budget_bytes:
            raise ConfigError("memory limits must satisfy MemoryLimit2 < MemoryLimit1 < MemoryBudget")
        if self.lpcc_cluster_number < 1:
            raise ConfigError("LpccClusterNumber must be at least 1")

    def with_(self, **changes: object) -> Config:
        return replace(self, **changes)


_KEYS: dict[str, tuple[str, type]] = {
    "ConfigFile": ("config_file", str),
    "DefaultTC": ("default_tc", int),
    "LpccEnabled": ("lpcc_enabled", bool),
    "LpccClusterNumber": ("lpcc_cluster_number", int),
    "LpccUpdateInterval": ("lpcc_update_interval", float),
    "ParseModelOnly": ("parse_model_only", bool),
    "LogConfigDetails": ("log_config_details", bool),
    "MemoryBudget": ("memory_budget_bytes", int),
    "MemoryLimit1": ("memory_limit1", int),
    "MemoryLimit2": ("memory_limit2", int),
    "CancelbackBatch": ("cancelback_batch", int),
    "RngSeed": ("rng_seed", int),
    "Deterministic": ("deterministic", bool),
}
_KEYS_FOLDED = {k.lower(): k for k in _KEYS}


def _convert(key: str, raw: str | None, kind: type) -> object:
    if kind is bool:
        if raw is None:
            return True
        low = raw.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if raw is None:
        raise ConfigError(f"{key} needs a value")
    try:
        value = kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{key}: malformed value {raw!r}") from None
    if isinstance(value, (int, float)) and value < 0:
        raise ConfigError(f"{key}: negative value {raw!r}")
    return value


def parse_settings(lines: list[str], base: Config | None = None) -> Config:
    """Apply `Name=value` settings (bare booleans allowed) on top of base."""
    values: dict[str, object] = {}
    levels = dict(base.log_levels) if base else {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, raw = line.partition("=")
        name = name.strip()
        if name.startswith(LOG_PREFIX):
            level = raw.strip().upper()
            if not sep or logging.getLevelName(level) == f"Level {level}":
                raise ConfigError(f"{name}: unknown log level {raw!r}")
            levels[name[len(LOG_PREFIX):]] = level
            continue
        canonical = _KEYS_FOLDED.get(name.lower())
        if canonical is None:
            raise ConfigError(f"unknown configuration key {name!r}")
        attr, kind = _KEYS[canonical]
        values[attr] = _convert(canonical, raw if sep else None, kind)
    config = base or Config()
    return replace(config, log_levels=levels, **values)


def read_config_file(path: str | Path, base: Config | None = None) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file {p} not found")
    return parse_settings(p.read_text().splitlines(), replace(base or Config(), config_file=str(p)))


def load_config(args: list[str]) -> Config:
    """Resolve settings from the arguments following the model file path."""
    if not args:
        raise ConfigError("missing simulation model file argument")
    if not Path(args[0]).is_file():
        raise ConfigError(f"simulation model file {args[0]} not found")
    rest = args[1:]
    if rest and rest[0].partition("=")[0].strip().lower() == "configfile":
        path = rest[0].partition("=")[2].strip()
        if not path:
            raise ConfigError("ConfigFile needs a value")
        return read_config_file(path)
    if rest:
        return parse_settings(rest)
    if Path(DEFAULT_CONFIG_FILE).is_file():
        return read_config_file(DEFAULT_CONFIG_FILE)
    return Config()


CONFIG_KEYS = tuple(_KEYS)
CONFIG_FIELDS = tuple(f.name for f in fields(Config))
