"""
Run configuration files.

A run config is a YAML mapping with up to four sections::

    model:    {blocks_audio: 6, d_model: 32, ...}   # ModelConfig
    sampler:  {num_steps: 16, late_steps: [12, 13, 14, 15]}
    train:    {iterations: 200, mode: omninft, ...}   # TrainConfig
    rewards:  {n_prompts: 4, conflict_epsilon: 0.0}

Every key maps onto a dataclass field. Unknown sections or keys and values
of the wrong type raise ``ConfigError`` naming ``section.key``; absent keys
keep their defaults, which are logged.
"""

import logging
from dataclasses import MISSING, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, Union, get_args, get_origin, get_type_hints

import yaml

from wrflow.errors import ConfigError
from wrflow.model.config import ModelConfig
from wrflow.rewards.corpus import RewardConfig
from wrflow.sampling.flow import SamplerConfig
from wrflow.training.config import TrainConfig, TrainMode

logger = logging.getLogger(__name__)

SECTIONS: Dict[str, Type] = {
    "model": ModelConfig,
    "sampler": SamplerConfig,
    "train": TrainConfig,
    "rewards": RewardConfig,
}

# TrainConfig fields filled from their own sections
_NESTED = ("model", "sampler", "rewards")


def _coerce(section: str, key: str, value: Any, hint: Any) -> Any:
    origin = get_origin(hint)
    args = get_args(hint)

    if origin is Union:
        inner = [a for a in args if a is not type(None)]
        if value is None and len(inner) < len(args):
            return None
        return _coerce(section, key, value, inner[0])

    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(section, key, f"expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(section, key, v, args[0]) for v in value)
        if len(value) != len(args):
            raise ConfigError(section, key, f"expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(section, key, v, a) for v, a in zip(value, args))

    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint.parse(value)
        except ValueError as exc:
            raise ConfigError(section, key, str(exc)) from None

    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(section, key, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(section, key, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(section, key, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(section, key, f"expected a string, got {value!r}")
        return value
    return value


def _section(name: str, cls: Type, values: Mapping[str, Any]) -> Any:
    if not isinstance(values, Mapping):
        raise ConfigError(name, "*", f"section must be a mapping, got {type(values).__name__}")
    hints = get_type_hints(cls)
    known = {f.name: f for f in fields(cls) if not (cls is TrainConfig and f.name in _NESTED)}

    for key in values:
        if key not in known:
            raise ConfigError(name, str(key), f"unknown key (known: {sorted(known)})")

    kwargs = {}
    for key, f in known.items():
        if key in values:
            kwargs[key] = _coerce(name, key, values[key], hints[key])
        else:
            default = f.default if f.default is not MISSING else f.default_factory()
            logger.info(f"{name}.{key} not set, using default {_plain(default)!r}")
    return cls(**kwargs)


def parse_run_config(data: Optional[Mapping[str, Any]]) -> TrainConfig:
    """Build and validate a TrainConfig from a parsed config mapping."""
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError("config", "*", "top level must be a mapping of sections")
    for name in data:
        if name not in SECTIONS:
            raise ConfigError(str(name), "*", f"unknown section (known: {sorted(SECTIONS)})")

    parts = {name: _section(name, cls, data.get(name) or {}) for name, cls in SECTIONS.items()}
    train = parts.pop("train")
    return replace(train, **parts).validate()


def load_run_config(path: Union[str, Path]) -> TrainConfig:
    """
    Read a YAML run config.

    Raises:
        FileNotFoundError: missing file
        ConfigError: malformed YAML or an invalid section/key
    """
    path = Path(path)
    logger.info(f"Loading config from {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("config", "*", f"{path} is not valid YAML: {exc}") from None
    return parse_run_config(data)


def apply_overrides(
    config: TrainConfig, seed: Optional[int] = None, mode: Optional[str] = None
) -> TrainConfig:
    """Command-line overrides of ``train.seed`` and ``train.mode``."""
    if seed is not None:
        config = replace(config, seed=int(seed))
    if mode is not None:
        try:
            config = replace(config, mode=TrainMode.parse(mode))
        except ValueError as exc:
            raise ConfigError("train", "mode", str(exc)) from None
    return config.validate()


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def run_config_dict(config: TrainConfig) -> Dict[str, Dict[str, Any]]:
    """Inverse of ``parse_run_config``: plain sections for YAML output."""
    out: Dict[str, Dict[str, Any]] = {}
    for name, cls in SECTIONS.items():
        obj = config if name == "train" else getattr(config, name)
        out[name] = {
            f.name: _plain(getattr(obj, f.name))
            for f in fields(cls)
            if not (cls is TrainConfig and f.name in _NESTED)
        }
    return out


def dump_run_config(config: TrainConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(run_config_dict(config), sort_keys=False))
    return path
