"""Parser for the JSON pipeline configuration document"""

import dataclasses
import json
from typing import Any, Dict, Optional, Union, get_args, get_origin, get_type_hints

from config.PipelineConfig import PipelineConfig, TrainConfig
from logs.logger import get_logger
from utils.errors import ConfigError

logger = get_logger(__name__)


def parsePipelineConfig(path: Optional[str] = None) -> PipelineConfig:
    """
    Load and validate a pipeline configuration file.

    Args:
        path: JSON file; None yields the defaults

    Returns:
        PipelineConfig: Validated configuration

    Raises:
        ConfigError: Unreadable file, unknown key, wrong type or out-of-range value
    """
    if path is None:
        logger.info("No config file given, using defaults")
        return parsePipelineDict({})
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(document, dict):
        raise ConfigError("<root>", "config document must be a JSON object")
    config = parsePipelineDict(document)
    logger.info(f"Loaded config {path} (hash {config.configHash()[:12]})")
    return config


def parsePipelineDict(document: Dict[str, Any]) -> PipelineConfig:
    """Build a validated PipelineConfig from a decoded JSON object"""
    document = dict(document)
    finetune = document.get("finetune")
    train = document.get("train")
    if finetune is not None or train is not None:
        # finetune inherits every key it does not set from train, except the finetune defaults for lr/iterations
        if finetune is not None and not isinstance(finetune, dict):
            raise ConfigError("finetune", "must be an object")
        if train is not None and not isinstance(train, dict):
            raise ConfigError("train", "must be an object")
        inherited = {key: value for key, value in (train or {}).items() if key not in ("lr", "iterations")}
        inherited.update(finetune or {})
        document["finetune"] = inherited
    config = _buildDataclass(PipelineConfig, document, "")
    config.validate()
    return config


def _buildDataclass(cls, document: Any, path: str, base: Any = None):
    if not isinstance(document, dict):
        raise ConfigError(path or "<root>", f"must be an object, got {type(document).__name__}")
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in document:
        if key not in known:
            raise ConfigError(_join(path, key), "unknown key")
    base = base if base is not None else cls()
    values = {}
    for f in dataclasses.fields(cls):
        if f.name in document and dataclasses.is_dataclass(hints[f.name]):
            values[f.name] = _buildDataclass(hints[f.name], document[f.name], _join(path, f.name), getattr(base, f.name))
        elif f.name in document:
            values[f.name] = _coerce(document[f.name], hints[f.name], _join(path, f.name))
        else:
            values[f.name] = getattr(base, f.name)
    return cls(**values)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _coerce(value: Any, hint: Any, path: str) -> Any:
    origin = get_origin(hint)
    if origin is Union:
        options = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, options[0], path)
    if dataclasses.is_dataclass(hint):
        return _buildDataclass(hint, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"must be a list, got {type(value).__name__}")
        (itemHint,) = get_args(hint)
        return [_coerce(item, itemHint, f"{path}[{i}]") for i, item in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"must be a boolean, got {type(value).__name__}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"must be an integer, got {type(value).__name__}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"must be a number, got {type(value).__name__}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"must be a string, got {type(value).__name__}")
        return value
    raise ConfigError(path, f"unsupported field type {hint}")


def trainConfigFor(config: PipelineConfig, section: str) -> TrainConfig:
    """TrainConfig of a section with the pipeline seed applied"""
    train = dataclasses.replace(getattr(config, section))
    train.seed = config.seed
    return train
