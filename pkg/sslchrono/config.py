import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import toml
import yaml
from traitlets.config import Config, LoggingConfigurable

from .util import ConfigError

__all__ = [
    "SEED_ENVIRONMENT_VARIABLE",
    "SslchronoConfigurable",
    "load_config_file",
    "seed_from_environment",
]

SEED_ENVIRONMENT_VARIABLE = "SSLCHRONO_SEED"

CONFIG_SUFFIXES = (".toml", ".yml", ".yaml", ".json")


class SslchronoConfigurable(LoggingConfigurable):

    """Base class for the sslchrono configuration sections.

    Each subclass is one section of a config file (named after the class) and one
    group of `--Class.trait=value` command-line flags.
    """

    def validate_config(self):
        """Check invariants spanning several traits.

        (This is not called magically anywhere.)

        Raises: ConfigError
        """

    def to_dict(self) -> Dict[str, Any]:
        """The configurable traits and their current values."""
        return {name: getattr(self, name) for name in sorted(self.trait_names(config=True))}

    def copy(self, **overrides):
        """Return an independent copy, optionally with some traits replaced."""
        values = dict(self.to_dict(), **overrides)
        return type(self)(**values)

    def _require(self, condition: bool, message: str):
        if not condition:
            raise ConfigError(f"{type(self).__name__}: {message}")


def load_config_file(config_file_path: Union[str, Path]) -> Config:
    """Read a TOML, YAML, or JSON config file into a traitlets Config.

    The file holds one table per configurable class, e.g.::

        [ModelConfig]
        d_model = 64

    Raises: ConfigError
    """
    path = Path(config_file_path)
    if path.suffix not in CONFIG_SUFFIXES:
        raise ConfigError(
            f"Unsupported config file type {path.suffix!r} "
            f"(expected one of {', '.join(CONFIG_SUFFIXES)})"
        )
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Can't read config file {path}: {e}")
    try:
        if path.suffix == ".toml":
            data = toml.loads(text)
        elif path.suffix == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text) or {}
    except (toml.TomlDecodeError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Can't parse config file {path}: {e}")
    if not isinstance(data, dict) or not all(
        isinstance(section, dict) for section in data.values()
    ):
        raise ConfigError(
            f"Config file {path} must contain one table per configuration section"
        )
    return Config(data)


def seed_from_environment() -> Optional[int]:
    """Return the master seed override from the environment, if set.

    Raises: ConfigError
    """
    value = os.environ.get(SEED_ENVIRONMENT_VARIABLE, "").strip()
    if not value:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENVIRONMENT_VARIABLE}={value!r} is not an integer")
