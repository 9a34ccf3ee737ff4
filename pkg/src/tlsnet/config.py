"""INI config files.

One file may hold any of the sections ``[dataset]``, ``[model]``, ``[train]``
and ``[grid]``; keys mirror the fields of :class:`DatasetConfig`,
:class:`ModelConfig`, :class:`TrainConfig` and :class:`TestGridConfig`.
Unknown sections and unknown keys are errors. Each section may carry
``format_version = 1``.

Value lists (``amplitude_values``, ``frequency_values``) are either
comma-separated numbers or ``start:stop:count`` for ``count`` evenly spaced
values including both ends.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
from pathlib import Path

import numpy as np

from .dataset import DatasetConfig
from .errors import ConfigError
from .evaluation import TestGridConfig
from .model import ModelConfig
from .training import TrainConfig

FORMAT_VERSION = 1
SECTIONS = {"dataset": DatasetConfig, "model": ModelConfig, "train": TrainConfig, "grid": TestGridConfig}


def parse_value_list(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        raise ConfigError("empty value list")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:count, got {text!r}")
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
        if count < 1:
            raise ConfigError("range count must be >= 1")
        return tuple(round(float(v), 12) for v in np.linspace(start, stop, count))
    return tuple(float(v) for v in text.split(","))


def _coerce(cls, name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return {"true": True, "false": False, "1": True, "0": False}[raw.strip().lower()]
        if isinstance(default, enum.Enum):
            return type(default)(raw.strip().lower())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return parse_value_list(raw)
        if isinstance(default, str):
            return raw.strip()
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{cls.__name__}] {name}: cannot parse {raw!r}") from exc
    raise ConfigError(f"{name}: unsupported field type")  # pragma: no cover


def _read(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    return parser


def section_from_mapping(section: str, values: dict[str, str], overrides: dict | None = None):
    cls = SECTIONS[section]
    defaults = {f.name: f.default for f in dataclasses.fields(cls) if f.init}
    values = dict(values)
    version = values.pop("format_version", None)
    if version is not None and int(version) > FORMAT_VERSION:
        raise ConfigError(f"[{section}] format_version {version} is newer than supported {FORMAT_VERSION}")
    unknown = set(values) - set(defaults)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s) {sorted(unknown)}")
    kwargs = {k: _coerce(cls, k, v, defaults[k]) for k, v in values.items()}
    kwargs.update(overrides or {})
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def load_section(path, section: str, overrides: dict | None = None):
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = _read(path)
    if not parser.has_section(section):
        raise ConfigError(f"{path}: missing [{section}] section")
    return section_from_mapping(section, dict(parser.items(section)), overrides)


def dump_section(section: str, obj) -> str:
    """INI text for one config object (lists written comma-separated)."""
    lines = [f"[{section}]", f"format_version = {FORMAT_VERSION}"]
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, enum.Enum):
            v = v.value
        elif isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
