"""Experiment configuration files (YAML or JSON) and their validation."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..demand import wtp_from_dict
from ..fluid import FARE_CONVENTIONS
from ..simkernel import DEFAULT_RIDERS_PER_MINUTE, POLICIES


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"config key '{key}': {msg}")
        self.key = key


INSTANCE_KEYS = {"example", "path", "L", "l", "N", "rows", "cols", "edge_length",
                 "total_rate", "seed"}
PRICING_KEYS = {"initial", "tol", "max_iter", "restarts", "seed"}
SWEEP_KEYS = {"example1_l", "example2_N", "example2_seeds", "policies", "T", "c"}
INGEST_KEYS = {"trips", "zones", "network", "coords", "clusters_per_zone",
               "window_periods", "scale", "start", "end", "seed"}


@dataclass
class ExperimentConfig:
    """Everything one CLI invocation needs.

    ``instance`` either names a builtin example (``example: 1`` or ``2`` plus
    its parameters) or an instance directory (``path``).
    """

    instance: dict = field(default_factory=lambda: {"example": 1})
    policy: list = field(default_factory=lambda: ["combined"])
    T: list = field(default_factory=lambda: [0])
    c: list = field(default_factory=lambda: [0.7])
    wtp: dict = field(default_factory=lambda: {"kind": "uniform"})
    fare: str = "per_mile"
    periods: int = 100_000
    replications: int = 1
    seed: int = 0
    pricing: dict = field(default_factory=dict)
    riders_per_minute: float = DEFAULT_RIDERS_PER_MINUTE
    enable_ratio: bool = True
    out: str | None = None
    sweep: dict = field(default_factory=dict)
    ingest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def write(self, directory: str | Path, name: str = "config.json") -> Path:
        path = Path(directory) / name
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _int(key, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}")
    return v


def _num(key, v, lo=None, strict=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(key, f"must be {'>' if strict else '>='} {lo}")
    return float(v)


def _list(key, v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _check_keys(prefix, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(prefix, "expected a mapping")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}", "unknown key")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    inst = cfg.instance
    _check_keys("instance", inst, INSTANCE_KEYS)
    if "path" in inst:
        if "example" in inst:
            raise ConfigError("instance.path", "give either 'path' or 'example'")
    else:
        ex = inst.get("example")
        if ex not in (1, 2):
            raise ConfigError("instance.example", f"must be 1 or 2, got {ex!r}")
        for k in ("L", "l", "N", "rows", "cols", "edge_length", "seed"):
            if k in inst:
                _int(f"instance.{k}", inst[k], 0 if k == "seed" else 1)
        if "total_rate" in inst:
            r = _num("instance.total_rate", inst["total_rate"], 0.0)
            if r > 1:
                raise ConfigError("instance.total_rate", "must be <= 1")
        if ex == 1 and "l" in inst and inst["l"] > inst.get("L", 100):
            raise ConfigError("instance.l", "must not exceed L")
    cfg.policy = _list("policy", cfg.policy)
    for p in cfg.policy:
        if p not in POLICIES:
            raise ConfigError("policy", f"unknown policy {p!r}; choose from {POLICIES}")
    cfg.T = [_int("T", t, 0) for t in _list("T", cfg.T)]
    cfg.c = [_num("c", x, 0.0, strict=True) for x in _list("c", cfg.c)]
    try:
        wtp_from_dict(cfg.wtp)
    except (TypeError, ValueError) as exc:
        raise ConfigError("wtp", str(exc)) from None
    if cfg.fare not in FARE_CONVENTIONS:
        raise ConfigError("fare", f"must be one of {FARE_CONVENTIONS}")
    _int("periods", cfg.periods, 1)
    _int("replications", cfg.replications, 1)
    _int("seed", cfg.seed, 0)
    _num("riders_per_minute", cfg.riders_per_minute, 0.0, strict=True)
    if not isinstance(cfg.enable_ratio, bool):
        raise ConfigError("enable_ratio", "expected true or false")
    _check_keys("pricing", cfg.pricing, PRICING_KEYS)
    if "tol" in cfg.pricing:
        _num("pricing.tol", cfg.pricing["tol"], 0.0, strict=True)
    if "max_iter" in cfg.pricing:
        _int("pricing.max_iter", cfg.pricing["max_iter"], 1)
    if "restarts" in cfg.pricing:
        _int("pricing.restarts", cfg.pricing["restarts"], 0)
    _check_keys("sweep", cfg.sweep, SWEEP_KEYS)
    for k in ("example1_l", "example2_N", "example2_seeds", "T"):
        if k in cfg.sweep:
            cfg.sweep[k] = [_int(f"sweep.{k}", v, 0) for v in _list(k, cfg.sweep[k])]
    if "c" in cfg.sweep:
        cfg.sweep["c"] = [_num("sweep.c", v, 0.0, strict=True) for v in _list("c", cfg.sweep["c"])]
    if "policies" in cfg.sweep:
        cfg.sweep["policies"] = _list("policies", cfg.sweep["policies"])
        for p in cfg.sweep["policies"]:
            if p not in POLICIES:
                raise ConfigError("sweep.policies", f"unknown policy {p!r}")
    _check_keys("ingest", cfg.ingest, INGEST_KEYS)
    for k in ("clusters_per_zone",):
        if k in cfg.ingest:
            _int(f"ingest.{k}", cfg.ingest[k], 1)
    for k in ("window_periods", "scale"):
        if k in cfg.ingest:
            _num(f"ingest.{k}", cfg.ingest[k], 0.0, strict=True)
    return cfg


def from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    known = set(ExperimentConfig.__dataclass_fields__)
    for k in data:
        if k not in known:
            raise ConfigError(k, "unknown key")
    return validate(ExperimentConfig(**copy.deepcopy(data)))


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a YAML or JSON file; ``None`` gives the defaults."""
    if path is None:
        return from_dict({})
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<file>", "top level must be a mapping")
    return from_dict(data)
