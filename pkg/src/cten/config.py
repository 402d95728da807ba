"""JSON experiment configuration with strict keys and dotted-path overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from .analysis import DemoConfig
from .ipd import IpdConfig
from .model import AblationConfig, ModelDims
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_MODEL_EXTRA = {"kind": "cten", "baseline_hidden": 32}
_DATA_EXTRA = {"path": None, "zscore": False}


def defaults() -> dict:
    demo = {f.name: getattr(DemoConfig(), f.name) for f in fields(DemoConfig) if f.name != "W"}
    demo = {k: list(v) if isinstance(v, tuple) else v for k, v in demo.items()}
    return {
        "data": {**asdict(IpdConfig()), **_DATA_EXTRA},
        "model": {**asdict(ModelDims()), **asdict(AblationConfig()), **_MODEL_EXTRA},
        "train": asdict(TrainConfig()),
        "export": {"sample_index": 0, "units": [0, 1, 2, 3, 4, 5, 6, 7], "train_first": True},
        "demo": demo,
    }


def _merge(base: dict, update: dict, path: str) -> None:
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be an object")
            _merge(base[key], value, where)
        else:
            base[key] = value


def _parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: dict = value
    for part in reversed(key.strip().split(".")):
        nested = {part: nested}
    return key, nested


def resolve(config_path=None, overrides=()) -> dict:
    cfg = defaults()
    if config_path is not None:
        try:
            user = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read {config_path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{config_path}: top level must be an object")
        _merge(cfg, user, "")
    for item in overrides:
        key, nested = _parse_override(item)
        if "." not in key and key in ("learning_rate", "epochs", "batch_size", "seeds", "n_train", "n_test"):
            nested = {"train": nested}
        _merge(cfg, nested, "")
    build(cfg)
    return cfg


def _typed(cls, values: dict, section: str):
    proto = cls()
    clean = {}
    for key, v in values.items():
        want = type(getattr(proto, key))
        if want is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if want in (int, float, str, bool, list) and (
                not isinstance(v, want) or (want is not bool and isinstance(v, bool))):
            raise ConfigError(f"'{section}.{key}' must be {want.__name__}, got {v!r}")
        clean[key] = v
    try:
        return cls(**clean)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}': {exc}") from None


def build(cfg: dict) -> dict:
    """Typed objects for a resolved config dict; raises ConfigError with the field name."""
    data = {k: v for k, v in cfg["data"].items() if k not in _DATA_EXTRA}
    model = cfg["model"]
    dims_keys = {f.name for f in fields(ModelDims)}
    abl_keys = {f.name for f in fields(AblationConfig)}
    out = {
        "data": _typed(IpdConfig, data, "data"),
        "dims": _typed(ModelDims, {k: model[k] for k in dims_keys}, "model"),
        "ablation": _typed(AblationConfig, {k: model[k] for k in abl_keys}, "model"),
        "train": _typed(TrainConfig, cfg["train"], "train"),
    }
    if model["kind"] not in ("cten", "mlp"):
        raise ConfigError("'model.kind' must be 'cten' or 'mlp'")
    if out["dims"].n_inputs != out["data"].n_channels and cfg["data"]["path"] is None:
        raise ConfigError(f"'model.n_inputs'={out['dims'].n_inputs} but data has {out['data'].n_channels} channels")
    if out["dims"].n_classes != out["data"].n_classes and cfg["data"]["path"] is None:
        raise ConfigError("'model.n_classes' must equal 'data.n_classes'")
    try:
        out["data"].validate()
        out["train"].validate()
        out["dims"].validate(out["ablation"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    demo = copy.deepcopy(cfg["demo"])
    demo = {k: tuple(v) if isinstance(v, list) else v for k, v in demo.items()}
    try:
        out["demo"] = DemoConfig(**demo)
    except TypeError as exc:
        raise ConfigError(f"section 'demo': {exc}") from None
    return out
