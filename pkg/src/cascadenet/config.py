"""Flat ``key=value`` configuration files mapped onto the run dataclasses."""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path
from typing import Mapping

from .features import PRESETS, FeatureConfig
from .model import TrainConfig
from .pipeline import RunConfig
from .synthetic import SyntheticSpec

_NESTED = {"features", "train"}


def read_kv_file(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _coerce(value, args[0])
    if origin is tuple:
        args = typing.get_args(tp)
        item = args[0]
        parts = [p.strip() for p in value.split(",") if p.strip()]
        return tuple(_coerce(p, item) for p in parts)
    if tp is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp is int:
        return int(value)
    if tp is float:
        return float(value)
    return value


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _update(obj, changes: Mapping[str, str]):
    hints = _hints(type(obj))
    return dataclasses.replace(obj, **{k: _coerce(v, hints[k]) for k, v in changes.items()})


def split_overrides(overrides: Mapping[str, str]) -> dict[str, dict[str, str]]:
    """Route each key to run, features, train or synthetic settings.

    Plain keys go to the first class that has them (run, then features, then
    train, then synthetic); ``features.x`` / ``train.x`` / ``synth.x`` force
    the target.
    """
    run_keys = {f.name for f in dataclasses.fields(RunConfig)} - _NESTED
    groups = {"run": {}, "features": {}, "train": {}, "synth": {}}
    classes = (("run", run_keys), ("features", {f.name for f in dataclasses.fields(FeatureConfig)}),
               ("train", {f.name for f in dataclasses.fields(TrainConfig)}),
               ("synth", {f.name for f in dataclasses.fields(SyntheticSpec)}))
    for key, value in overrides.items():
        if key == "preset":
            groups["features"]["preset"] = value
            continue
        if "." in key:
            group, name = key.split(".", 1)
            if group not in groups or name not in dict(classes)[group]:
                raise KeyError(f"unknown config key {key!r}")
            groups[group][name] = value
            continue
        for group, names in classes:
            if key in names:
                groups[group][key] = value
                break
        else:
            raise KeyError(f"unknown config key {key!r}")
    return groups


def build_run_config(overrides: Mapping[str, str], base: RunConfig | None = None) -> RunConfig:
    groups = split_overrides(overrides)
    cfg = base or RunConfig()
    feats = cfg.features
    preset = groups["features"].pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise KeyError(f"unknown feature preset {preset!r}; choose from {sorted(PRESETS)}")
        feats = PRESETS[preset]
    feats = _update(feats, groups["features"])
    train = _update(cfg.train, groups["train"])
    cfg = _update(cfg, groups["run"])
    return dataclasses.replace(cfg, features=feats, train=train)


def build_synthetic_spec(overrides: Mapping[str, str]) -> SyntheticSpec:
    groups = split_overrides(overrides)
    synth = dict(groups["synth"])
    if "seed" not in synth and "seed" in groups["run"]:
        synth["seed"] = groups["run"]["seed"]
    return _update(SyntheticSpec(), synth)
