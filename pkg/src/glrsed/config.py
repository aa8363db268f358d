"""Plain-text ``key=value`` configuration files.

Keys are the field names of :class:`TrainConfig`, :class:`ModelConfig`,
:class:`ThresholdConfig` and :class:`FeatureConfig`. Lists are comma
separated; ``#`` starts a comment. Values given on the command line override
the file, which overrides the defaults.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .features import ENERGY_FLOOR, FRAME_LENGTH, FRAME_SHIFT
from .model import ModelConfig
from .postprocess import ThresholdConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    frame_length: float = FRAME_LENGTH
    frame_shift: float = FRAME_SHIFT
    energy_floor: float = ENERGY_FLOOR


# num_events is always taken from the event vocabulary
DERIVED = {"num_events"}
SECTIONS: tuple[type, ...] = (TrainConfig, ModelConfig, ThresholdConfig, FeatureConfig)


def _fields(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.init}


def config_keys() -> dict[str, type]:
    keys: dict[str, type] = {}
    for cls in SECTIONS:
        for name in _fields(cls):
            if name not in DERIVED:
                keys[name] = cls
    return keys


def parse_value(raw: str, hint) -> Any:
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    if origin is tuple:
        args = typing.get_args(hint)
        items = [s for s in (p.strip() for p in raw.split(",")) if s] if raw else []
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(parse_value(s, args[0]) for s in items)
        if len(items) != len(args):
            raise ConfigError(f"expected {len(args)} comma-separated values, got {raw!r}")
        return tuple(parse_value(s, a) for s, a in zip(items, args))
    raise ConfigError(f"unsupported option type {hint}")


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    return str(value)


def read_pairs(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig
    model: dict[str, Any]
    threshold: ThresholdConfig
    features: FeatureConfig

    def model_config(self, num_events: int) -> ModelConfig:
        return ModelConfig(num_events=num_events, **self.model)

    def snapshot(self) -> dict[str, str]:
        out = {}
        for obj in (self.train, self.threshold, self.features):
            for f in dataclasses.fields(obj):
                out[f.name] = format_value(getattr(obj, f.name))
        defaults = ModelConfig()
        for name in _fields(ModelConfig):
            if name not in DERIVED:
                out[name] = format_value(self.model.get(name, getattr(defaults, name)))
        return dict(sorted(out.items()))


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    raw = read_pairs(path) if path is not None else {}
    keys = config_keys()
    values: dict[type, dict[str, Any]] = {cls: {} for cls in SECTIONS}
    for key, text in raw.items():
        if key not in keys:
            raise ConfigError(f"unknown configuration key {key!r}")
        cls = keys[key]
        try:
            values[cls][key] = parse_value(text, _fields(cls)[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in keys:
            raise ConfigError(f"unknown configuration key {key!r}")
        cls = keys[key]
        if isinstance(value, str):
            try:
                value = parse_value(value, _fields(cls)[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        values[cls][key] = value
    try:
        train = TrainConfig(**values[TrainConfig])
        threshold = ThresholdConfig(**values[ThresholdConfig])
        features = FeatureConfig(**values[FeatureConfig])
        ModelConfig(num_events=1, **values[ModelConfig])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(train, values[ModelConfig], threshold, features)


def load_synth_spec(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None):
    """Synthetic scene spec from ``key=value``; ``pairs`` is ``a-b:p,...``."""
    from .data import SynthSpec

    raw = read_pairs(path) if path is not None else {}
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    fields = _fields(SynthSpec)
    kwargs: dict[str, Any] = {}
    extra = {}
    for key, text in raw.items():
        if key in ("n_clips", "test_clips"):
            extra[key] = int(text)
            continue
        if key not in fields:
            raise ConfigError(f"unknown synthetic spec key {key!r}")
        try:
            if key == "pairs":
                kwargs[key] = _parse_synth_pairs(text)
            else:
                kwargs[key] = parse_value(text, fields[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    try:
        spec = SynthSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return spec, extra.get("n_clips", 100), extra.get("test_clips", 0)


def _parse_synth_pairs(text: str) -> tuple[tuple[int, int, float], ...]:
    pairs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            members, prob = item.split(":")
            a, b = members.split("-")
            pairs.append((int(a), int(b), float(prob)))
        except ValueError:
            raise ConfigError(f"bad pair {item!r}; expected a-b:probability") from None
    return tuple(pairs)
