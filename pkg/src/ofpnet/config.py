"""Flat dotted-key config files shared by every CLI command.

Format: one `key = value` per line, `#` comments, values parsed as JSON
literals with a bare-string fallback (`branch_mode = full` works without
quotes). Keys are prefixed by section: `model.*` maps onto ModelConfig,
`train.*` onto TrainConfig, and `data.root` names the dataset root.
Overrides (`--set key=value`) apply after the file, last one wins.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig

DATA_KEYS = {"data.root": ""}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_file(path: str | Path) -> dict:
    """Read a flat config file into a {dotted_key: value} dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = parse_value(value)
    return values


def apply_overrides(values: dict, overrides: list[str]) -> dict:
    """Apply `key=value` strings on top of `values`, last one winning."""
    out = dict(values)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = parse_value(value)
    return out


def _coerce(name: str, annotation, value):
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        annotation = args[0]
        origin = typing.get_origin(annotation)
    if annotation is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{name} expects an integer, got {value!r}")
            return int(value)
        return value
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {value!r}")
        return value
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name} expects a string, got {value!r}")
        return value
    if origin is tuple:
        if isinstance(value, str):
            value = [parse_value(v) for v in value.split(",")]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} expects a list, got {value!r}")
        return tuple(value)
    return value


def _build_section(cls, prefix: str, values: dict):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key in values:
            kwargs[f.name] = _coerce(key, hints[f.name], values[key])
    return cls(**kwargs)


def resolve(values: dict) -> tuple[ModelConfig, TrainConfig, dict]:
    """Turn a flat dict into typed configs plus the data.* section.

    Unknown keys raise ConfigError so typos never silently fall back to
    defaults.
    """
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in values:
        section, _, name = key.partition(".")
        known = (
            (section == "model" and name in model_fields)
            or (section == "train" and name in train_fields)
            or key in DATA_KEYS
        )
        if not known:
            raise ConfigError(f"unknown config key {key!r}")
    model = _build_section(ModelConfig, "model", values)
    train = _build_section(TrainConfig, "train", values)
    data = {k: values.get(k, default) for k, default in DATA_KEYS.items()}
    return model, train, data


def flatten(model: ModelConfig, train: TrainConfig, data: dict | None = None) -> dict:
    """Fully resolved flat view of the configs, as echoed into run manifests."""
    out: dict = {}
    for f in dataclasses.fields(ModelConfig):
        value = getattr(model, f.name)
        out[f"model.{f.name}"] = list(value) if isinstance(value, tuple) else value
    for f in dataclasses.fields(TrainConfig):
        out[f"train.{f.name}"] = getattr(train, f.name)
    for key, value in (data or {}).items():
        out[key] = value
    return out


def config_fingerprint(model: ModelConfig) -> str:
    """Short stable hash of the architecture configuration."""
    payload = json.dumps(
        dataclasses.asdict(model), sort_keys=True, default=str
    ).encode()
    return hashlib.sha256(payload).hexdigest()[:12]
