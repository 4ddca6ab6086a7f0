"""
Config Service — resolves the PipelineConfig from its layered sources.

Precedence (later wins):
  1. built-in defaults
  2. config file (flat `key = value`, '#' comments)
  3. --preset
  4. environment variables DEQUANT_<KEY> (a .env file in the working
     directory is loaded first, without overriding the real environment)
  5. explicit command-line flags
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from dotenv import dotenv_values, find_dotenv

from models.pipeline_config import PipelineConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DEQUANT_"

# Both low-light experiment settings, with per-pair sampling switched off
PRESETS: Dict[str, Dict[str, object]] = {
    "bsd-global": {
        "dim_gain": 1.0 / 30.0,
        "gamma_ratio": 1.3,
        "noise_sigma": 0.25,
        "param_sampling": False,
    },
    "bsd-local": {
        "dim_gain": 1.0 / 5.0,
        "gamma_ratio": 1.5,
        "noise_sigma": 0.25,
        "param_sampling": False,
    },
}


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    values = dotenv_values(path)
    for key, value in values.items():
        if value is None:
            raise ConfigError(key, f"missing '= value' in {path.name}")
    logger.debug(f"Read {len(values)} keys from {path}")
    return {key.strip().lower(): value for key, value in values.items()}


def preset_values(name: str) -> Dict[str, object]:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r} (choose from {', '.join(sorted(PRESETS))})")
    return dict(PRESETS[name])


def env_values(environ: Optional[Mapping[str, str]] = None, load_env_file: bool = True) -> Dict[str, str]:
    if environ is None:
        environ = dict(os.environ)
        if load_env_file:
            env_file = find_dotenv(usecwd=True)
            if env_file:
                # the real environment wins over .env
                file_values = {k: v for k, v in dotenv_values(env_file).items() if v is not None}
                environ = {**file_values, **environ}
    return {
        key[len(ENV_PREFIX):].lower(): value
        for key, value in environ.items()
        if key.startswith(ENV_PREFIX)
    }


def resolve_config(
    config_path: Optional[Union[str, Path]] = None,
    preset: Optional[str] = None,
    cli_values: Optional[Mapping[str, object]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """Merge every source into a validated PipelineConfig."""
    layers = []
    if config_path:
        layers.append(("file", read_config_file(config_path)))
    if preset:
        layers.append(("preset", preset_values(preset)))
    layers.append(("env", env_values(environ)))
    layers.append(("cli", dict(cli_values or {})))

    merged: Dict[str, object] = {}
    for source, values in layers:
        for key, value in values.items():
            if key not in PipelineConfig.keys():
                raise ConfigError(key, f"unknown configuration key (from {source})")
            merged[key] = value
    cfg = PipelineConfig().with_values(merged)
    logger.debug(f"Resolved configuration from {[name for name, values in layers if values]}")
    return cfg


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: PipelineConfig) -> str:
    """`key = value` text that re-parses to an identical PipelineConfig."""
    lines = ["# dequant configuration"]
    lines += [f"{key} = {_format_value(value)}" for key, value in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"
