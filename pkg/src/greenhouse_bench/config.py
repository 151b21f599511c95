"""Flat dotted-key run configuration: defaults, file loading, overrides and hashing.

Keys look like ``mpc.N_p`` or ``ddpg.gamma``; values are JSON scalars or
lists. A configuration file is a JSON object with such keys (nested objects
are flattened on load).
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict
from pathlib import Path

from .ddpg.agent import TrainConfig
from .ddpg.env import ReferenceSchedule, RewardConfig
from .eval import EpiParams
from .model import DEFAULT_H, DEFAULT_PARAMS, X0
from .mpc import MpcConfig
from .weather import WeatherProfile

OUTPUT_ROOT_ENV = "GREENHOUSE_BENCH_OUTPUT"


class ConfigError(ValueError):
    pass


def _section(prefix: str, values: dict) -> dict:
    return {f"{prefix}.{k}": (list(v) if isinstance(v, tuple) else v) for k, v in values.items()}


def default_config() -> dict:
    cfg = {
        "seed": 0,
        "output_root": "runs",
        "model.h": DEFAULT_H,
        "model.x0": list(X0),
        "weather.source": "synthetic",   # or a CSV path
        "weather.column_map": {},
        "weather.seed": 0,
        "simulate.days": 1,
        "simulate.u": [0.0, 0.0, 0.0],
        "eval.days": 3,
        "eval.full_cycle_days": 40,
        "eval.plots": True,
        "ddpg.checkpoint": None,
        "ddpg.train_days": 20,
        "ddpg.train_weather_seed": 7,
        "ddpg.kappa_low": 0.7,
        "ddpg.kappa_high": 1.3,
        "ddpg.x0_low": 0.8,
        "ddpg.x0_high": 1.2,
    }
    cfg.update({f"model.{k}": v for k, v in DEFAULT_PARAMS.items()})
    cfg.update(_section("weather.profile", WeatherProfile().to_dict()))
    mpc = MpcConfig().to_dict()
    mpc["du"] = None  # follows u_max / 10 unless set
    cfg.update(_section("mpc", mpc))
    cfg.update(_section("ddpg", TrainConfig().to_dict()))
    cfg.update(_section("reward", RewardConfig().to_dict()))
    cfg.update(_section("refs", asdict(ReferenceSchedule())))
    cfg.update(_section("eval.epi", asdict(EpiParams())))
    return cfg


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k != "column_map" and not key.endswith("column_map"):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text: str):
    """JSON literal if it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, str):
            try:
                value = float(value)  # accepts "inf" and "nan"
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and float(value).is_integer():
            return int(value)
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if default and isinstance(default[0], (int, float)):
            return [_coerce(key, v, 0.0) for v in value]
        return value
    return value


def resolve(files=(), overrides=()) -> dict:
    """Defaults, then each JSON file in order, then ``key=value`` overrides."""
    cfg = default_config()
    updates = []
    for f in files:
        path = Path(f)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        updates.extend(flatten(data).items())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        updates.append((k.strip(), parse_value(v.strip())))
    for k, v in updates:
        if k not in cfg:
            raise ConfigError(f"unknown config key {k!r}")
        cfg[k] = _coerce(k, v, cfg[k])
    return cfg


def section(cfg: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p) and "." not in k[len(p):]}


def _canonical(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def dumps(cfg: dict) -> str:
    return json.dumps(_canonical(cfg), indent=2, sort_keys=True) + "\n"


def config_hash(cfg: dict) -> str:
    """Short SHA-256 of the canonical JSON, ignoring where outputs go."""
    core = {k: v for k, v in cfg.items() if k != "output_root"}
    blob = json.dumps(_canonical(core), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg["output_root"])
