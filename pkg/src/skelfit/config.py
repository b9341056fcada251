"""JSON config file for the command-line tools.

The file mirrors the library's config dataclasses section by section:

    {"render": {...}, "camera": {...}, "augment": {...},
     "adam": {...}, "loss_weights": {...}, "generator": {...}}

Every section and every key is optional; omitted values take the library
defaults. Unknown keys are rejected with the offending dotted path, so a
typo can't silently fall back to a default. The generator section inherits
the file's top-level camera and augment sections unless it sets its own.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .camera import PerspectiveCamera
from .datasets import GeneratorConfig
from .exceptions import ConfigError
from .fitting import LossWeights
from .optim import AdamConfig
from .render import RenderParams

__all__ = ["CliConfig", "load_cli_config", "build_dataclass"]


@dataclass(frozen=True)
class CliConfig:
    render: RenderParams = field(default_factory=RenderParams)
    camera: PerspectiveCamera = field(default_factory=PerspectiveCamera)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sections: tuple[str, ...] = ()  # which sections the file actually set


def _coerce(hint, value, path: str):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(hint)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: null not allowed here")
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(arg, value, path)
            except ConfigError:
                continue
        raise ConfigError(f"{path}: cannot interpret {value!r}")
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return build_dataclass(hint, value, path)
    if origin is tuple:
        args = typing.get_args(hint)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array, got {type(value).__name__}")
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {hint!r}")


def build_dataclass(cls, data: dict, path: str, defaults: dict | None = None):
    """Instantiate a config dataclass from a JSON object, rejecting unknown
    keys and naming the offending dotted path on any error."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = dict(defaults or {})
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
        kwargs[key] = _coerce(hints[key], value, f"{path}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_SECTIONS = ("render", "camera", "augment", "adam", "loss_weights", "generator")


def load_cli_config(path=None) -> CliConfig:
    """Load a config file; None means all defaults."""
    if path is None:
        return CliConfig()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be an object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key (top-level sections: {', '.join(_SECTIONS)})")
    render = build_dataclass(RenderParams, data.get("render", {}), "render")
    camera = build_dataclass(PerspectiveCamera, data.get("camera", {}), "camera")
    augment = build_dataclass(AugmentConfig, data.get("augment", {}), "augment")
    adam = build_dataclass(AdamConfig, data.get("adam", {}), "adam")
    weights = build_dataclass(LossWeights, data.get("loss_weights", {}), "loss_weights")
    generator = build_dataclass(
        GeneratorConfig,
        data.get("generator", {}),
        "generator",
        defaults={"camera": camera, "augment": augment},
    )
    return CliConfig(
        render=render,
        camera=camera,
        augment=augment,
        adam=adam,
        loss_weights=weights,
        generator=generator,
        sections=tuple(s for s in _SECTIONS if s in data),
    )
