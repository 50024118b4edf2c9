"""Run configuration: model and training settings plus paths, as ``key = value`` text."""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from typing import Iterable

from .model import ConfigError, ModelConfig
from .training import TrainConfig

OUTPUT_DIR_ENV = "GCDT_OUTPUT_DIR"


@dataclass
class DataConfig:
    train: str = ""
    dev: str = ""
    test: str = ""
    scheme: str = "bioes"            # tagging scheme of the input files
    pretrained: str = ""             # "word v1 ... v_d" text file
    external_train: str = ""
    external_dev: str = ""
    external_test: str = ""
    external_align: str = "first"
    output_dir: str = ""
    workers: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def sections(self):
        return (("model", self.model), ("train", self.train), ("data", self.data))

    def resolved_output_dir(self) -> str:
        return self.data.output_dir or os.environ.get(OUTPUT_DIR_ENV, "") or "gcdt-out"

    def dumps(self) -> str:
        """Every key with its value, in a form ``parse_config`` reads back."""
        lines = []
        for name, section in self.sections():
            lines.append(f"# {name}")
            for f in dataclasses.fields(section):
                lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"


def _keys() -> dict[str, str]:
    keys: dict[str, str] = {}
    for section, cls in (("model", ModelConfig), ("train", TrainConfig), ("data", DataConfig)):
        for f in dataclasses.fields(cls):
            if f.name in keys:
                raise AssertionError(f"duplicate config key {f.name}")
            keys[f.name] = section
    return keys


KEYS = _keys()


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _hint(cls, name: str):
    return typing.get_type_hints(cls)[name]


def _convert(key: str, raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _convert(key, raw, args[0])
    if origin is tuple:
        return tuple(_convert(key, part, typing.get_args(hint)[0])
                     for part in raw.replace("[", "").replace("]", "").split(",") if part.strip())
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {hint.__name__}") from None
    return raw


def apply(config: RunConfig, key: str, raw: str) -> None:
    key = key.strip()
    section = KEYS.get(key)
    if section is None:
        raise ConfigError(f"unknown config key {key!r}")
    target = getattr(config, section)
    setattr(target, key, _convert(key, raw, _hint(type(target), key)))


def parse_config(lines: Iterable[str], overrides: Iterable[str] = ()) -> RunConfig:
    """Read ``key = value`` lines (``#`` starts a comment), then ``key=value`` overrides."""
    config = RunConfig()
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        apply(config, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, value = item.split("=", 1)
        apply(config, key, value)
    try:
        config.model.validate()
        config.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config


def load_config(path: str | None, overrides: Iterable[str] = ()) -> RunConfig:
    if path is None:
        return parse_config([], overrides)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh, overrides)
