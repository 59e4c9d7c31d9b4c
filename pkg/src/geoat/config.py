"""Run configuration: defaults < config file < command-line flags < ``--set`` overrides."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError
from .geo import DEFAULT_FEATURE_KEYS
from .models import ModelConfig
from .signal import MelConfig
from .train import FeatureConfig, TrainConfig


def default_config() -> dict:
    return {
        "manifest": None,
        "split": None,
        "seeds": None,
        "class_names": None,
        "split_spec": {"fractions": [0.70, 0.15, 0.15], "seed": 0},
        "model": ModelConfig().to_dict(),
        "train": {**TrainConfig().to_dict(), "lr": None},
        "features": FeatureConfig().to_dict(),
        "geo": {
            "side_m": 1000.0,
            "feature_keys": list(DEFAULT_FEATURE_KEYS),
            "endpoint": None,
            "timeout_s": 60.0,
            "max_retries": 3,
            "min_request_interval_s": 1.0,
            "cache_dir": None,
        },
    }


def _prune(d: dict) -> dict:
    """Drop ``None`` leaves so unset command-line flags never mask lower layers."""
    return {k: _prune(v) if isinstance(v, dict) else v for k, v in d.items() if v is not None}


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (update or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config_file(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    doc.pop("tool_version", None)
    return doc


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars/lists."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = nxt
        node[parts[-1]] = yaml.safe_load(raw) if raw else None
    return cfg


def resolve(file_path=None, flags: dict | None = None, overrides=None) -> dict:
    cfg = default_config()
    if file_path:
        cfg = deep_merge(cfg, load_config_file(file_path))
    cfg = deep_merge(cfg, _prune(flags or {}))
    cfg = apply_overrides(cfg, overrides)
    # validate the typed sections early
    try:
        ModelConfig.from_dict(cfg["model"])
        TrainConfig.from_dict(cfg["train"])
        feature_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


def feature_config(cfg: dict) -> FeatureConfig:
    f = dict(cfg["features"])
    f["mel"] = MelConfig(**f.get("mel", {}))
    return FeatureConfig.from_dict(f)


def write_resolved(cfg: dict, out_dir, name: str = "resolved_config.yaml") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(cfg)
    doc["tool_version"] = __version__
    path = out / name
    path.write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")
    (out / "VERSION").write_text(__version__ + "\n")
    return path
