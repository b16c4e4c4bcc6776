"""Pipeline configuration loaded from TOML or JSON.

Sections mirror the component configs::

    [dataset]             seed, train_scenes, test_scenes
    [dataset.scene]       SceneConfig fields
    [dataset.scene.camera]
    [dataset.synth]       FeatureSynth fields
    [miner]               max_depth (default 0.7 m), min_overlap_area, min_iou, grid_cell
    [train]               TrainConfig fields
    [train.augment]       AugmentationPolicy fields
    [probe]               ProbeConfig fields

Unknown keys are rejected. ``POLYMATCH_CONFIG`` names a default file.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .evaluate import ProbeConfig
from .miner import MinerConfig
from .pipeline import DatasetConfig
from .ssl import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_VAR = "POLYMATCH_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    miner: MinerConfig = field(default_factory=MinerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where}: expected a table")
        return build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        args = typing.get_args(tp)
        inner = args[0] if args else Any
        return tuple(_coerce(inner, v, where) for v in value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def build(cls, data: Mapping, where: str = ""):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where or 'root'}]: {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where or 'root'}] {exc}") from None


def merge(cfg, overrides: Mapping[str, Any]):
    """Replace dotted-path fields, e.g. ``{"miner.max_depth": 0.9}``."""
    for path, value in overrides.items():
        if value is None:
            continue
        cfg = _set(cfg, path.split("."), value)
    return cfg


def _set(obj, parts, value):
    name = parts[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config field {'.'.join(parts)}")
    if len(parts) > 1:
        value = _set(getattr(obj, name), parts[1:], value)
    try:
        return dataclasses.replace(obj, **{name: value})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path: Optional[os.PathLike] = None) -> PipelineConfig:
    """Load ``path`` (or ``$POLYMATCH_CONFIG``); defaults when neither is set."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    return build(PipelineConfig, data)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
