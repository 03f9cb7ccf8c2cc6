"""TOML run configuration with command-line overrides.

Sections map onto dataclasses: ``[train]`` TrainConfig, ``[model]``
ModelConfig, ``[rawboost]`` RawBoostConfig, ``[gradcheck]`` GradCheckConfig.
Keys mirror the field names exactly; anything else is rejected.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterable, Optional

import tomli

from .augment import RawBoostConfig
from .errors import ConfigError
from .model import ModelConfig
from .selfcheck import GradCheckConfig
from .train import TrainConfig

SECTIONS = {
    "train": TrainConfig,
    "model": ModelConfig,
    "rawboost": RawBoostConfig,
    "gradcheck": GradCheckConfig,
}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    rawboost: RawBoostConfig = field(default_factory=RawBoostConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)

    def to_dict(self) -> dict:
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def parse_value(text: str):
    """TOML scalar/array syntax, with bare words taken as strings."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(doc: Dict[str, dict], item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, text = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in {key!r}")
    else:
        owners = [s for s, cls in SECTIONS.items() if key in _field_names(cls)]
        if not owners:
            raise ConfigError(f"unknown config key {key!r}")
        if len(owners) > 1:
            raise ConfigError(f"config key {key!r} is ambiguous; use one of "
                              + ", ".join(f"{s}.{key}" for s in owners))
        section, name = owners[0], key
    if name not in _field_names(SECTIONS[section]):
        raise ConfigError(f"unknown config key {section}.{name!r}")
    doc.setdefault(section, {})[name] = parse_value(text.strip())


def build(doc: Dict[str, dict]) -> RunConfig:
    for section, table in doc.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = sorted(set(table) - _field_names(SECTIONS[section]))
        if unknown:
            raise ConfigError(f"unknown key {section}.{unknown[0]!r}")
    parts = {}
    for section, cls in SECTIONS.items():
        try:
            parts[section] = cls(**doc.get(section, {}))
        except TypeError as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return RunConfig(**parts)


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                seed: Optional[int] = None) -> RunConfig:
    """Read ``path`` (if any), apply ``--set`` overrides, then the global seed.

    The global seed drives training, model initialisation and the grad check.
    """
    doc: Dict[str, dict] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        apply_override(doc, item)
    if seed is not None:
        for section in ("train", "model", "gradcheck"):
            doc.setdefault(section, {})["seed"] = seed
    return build(doc)
