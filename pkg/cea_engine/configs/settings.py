"""Configuration module for the cost-effectiveness engine.

This module provides configuration management for the engine, including:
- A dict-backed configuration base with attribute access
- Engine-wide defaults loaded from ``static/config.json``
- Overlays from a YAML run file and from ``CEA_ENGINE_*`` environment variables

Example:
    config = EngineConfig()
    config.quadrature_order          # 70
    config.overlay({"fit": {"quadrature_order": 30}})
"""
import json
import os
from pathlib import Path

import yaml
from dotenv import load_dotenv

from cea_engine.exceptions import ConfigurationError
from cea_engine.utils import logger

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "static" / "config.json"
ENV_PREFIX = "CEA_ENGINE_"

# YAML sections whose keys map onto engine settings
SECTION_KEYS = {
    "fit": {
        "quadrature_order", "adaptive_quadrature", "lognormal_literal", "gradient_tolerance",
        "relative_tolerance", "max_iterations", "hessian_step",
    },
    "imputation": {"imputations", "burn_in", "spacing"},
    "report": {
        "confidence_level", "lambda_min", "lambda_max", "lambda_step", "reference_lambda",
    },
    "diagnostics": {"screening_threshold", "screening_quadrature_order"},
    "run": {"seed"},
}

# Alternative spellings accepted inside a section
SECTION_ALIASES = {
    "imputation": {"k": "imputations"},
}


class BaseConfig(dict):
    """
    Base configuration class for all configurations.
    """

    def __key(self, key):
        return "" if key is None else key

    def __str__(self):
        return json.dumps(self, sort_keys=True)

    def __setattr__(self, key, value):
        if key.startswith('_'):
            super().__setattr__(key, value)
        else:
            self[self.__key(key)] = value

    def __getattr__(self, key):
        if key.startswith('_'):
            return super().__getattribute__(key)
        return self.get(self.__key(key))

    def __getitem__(self, key):
        return self.get(self.__key(key))

    def __setitem__(self, key, value):
        return super().__setitem__(self.__key(key), value)

    def update(self, other):
        for key, value in other.items():
            self[key] = value


class EngineConfig(BaseConfig):
    """Engine settings: quadrature, optimizer, sampler, report and screening defaults."""

    def __init__(self, config_path=None, run_file=None):
        super().__init__()
        super().__setattr__('_config_items', {})

        self.config_path = str(Path(config_path)) if config_path else str(DEFAULT_CONFIG_PATH)

        self.add_item("quadrature_order", 70, des="Gauss-Hermite points per random effect")
        self.add_item("adaptive_quadrature", False, des="Centre nodes on per-cluster posterior modes")
        self.add_item("lognormal_literal", False, des="Use the log-scale location form of the Lognormal")
        self.add_item("gradient_tolerance", 1e-6, des="Newton stop when max |gradient| falls below")
        self.add_item("relative_tolerance", 1e-10, des="Newton stop on relative log-likelihood change")
        self.add_item("max_iterations", 200, des="Newton iteration cap")
        self.add_item("hessian_step", 1e-4, des="Central-difference step on the unconstrained scale")
        self.add_item("imputations", 5, des="Number of completed datasets K")
        self.add_item("burn_in", 1000, des="Gibbs iterations discarded before the first retained draw")
        self.add_item("spacing", 500, des="Gibbs iterations between retained draws")
        self.add_item("confidence_level", 0.95, des="Confidence level of INB intervals")
        self.add_item("lambda_min", 0.0, des="First willingness-to-pay value of the INB grid")
        self.add_item("lambda_max", 50000.0, des="Last willingness-to-pay value of the INB grid")
        self.add_item("lambda_step", 1000.0, des="Willingness-to-pay grid spacing")
        self.add_item("reference_lambda", 20000.0, des="Threshold reported in the increments table")
        self.add_item("screening_threshold", 0.1, des="p-value below which a covariate is a candidate auxiliary")
        self.add_item("screening_quadrature_order", 30, des="Quadrature points for random-intercept logistic fits")
        self.add_item("seed", 20121, des="Master seed")

        self.load()
        self._overlay_environment()
        if run_file:
            self.overlay_file(run_file)

    def add_item(self, key, default, des=None, choices=None):
        """Add a configuration item."""
        self._config_items[key] = {"default": default, "des": des, "choices": choices}
        self[key] = default

    def set(self, key, value):
        """Set a known configuration item, coercing to the type of its default."""
        if key not in self._config_items:
            raise ConfigurationError(f"Unknown configuration item: {key}")
        default = self._config_items[key]["default"]
        try:
            if isinstance(default, bool):
                value = value if isinstance(value, bool) else str(value).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid value for {key}: {value!r}") from e
        choices = self._config_items[key]["choices"]
        if choices and value not in choices:
            raise ConfigurationError(f"{key} must be one of {choices}, got {value!r}")
        self[key] = value

    def load(self):
        """Load defaults from the JSON config file."""
        logger.debug("Loading engine configuration from %s", self.config_path)
        if not os.path.exists(self.config_path):
            raise ConfigurationError(f"Configuration file not found: {self.config_path}")
        with open(self.config_path, "r", encoding="utf-8") as f:
            config = json.load(f)
        if not isinstance(config, dict):
            raise ConfigurationError("Invalid configuration file: root element must be a dictionary")
        for k, v in config.items():
            self.set(k, v)

    def _overlay_environment(self):
        load_dotenv()
        for key in self._config_items:
            env_value = os.environ.get(ENV_PREFIX + key.upper())
            if env_value is not None:
                logger.debug("Configuration %s overridden from environment", key)
                self.set(key, env_value)

    def overlay(self, sections):
        """
        Apply the known keys of YAML sections (``fit``, ``imputation``, ...).

        ``k`` in the ``imputation`` section is read as ``imputations``.
        Environment variables are applied again afterwards and keep
        precedence over the run file.
        """
        if not isinstance(sections, dict):
            raise ConfigurationError("Run file root must be a mapping of sections")
        for section, keys in SECTION_KEYS.items():
            values = sections.get(section) or {}
            if not isinstance(values, dict):
                raise ConfigurationError(f"Section '{section}' must be a mapping")
            values = self._resolve_aliases(section, values)
            for key in keys & set(values):
                self.set(key, values[key])
        self._overlay_environment()

    @staticmethod
    def _resolve_aliases(section, values):
        values = dict(values)
        for alias, key in SECTION_ALIASES.get(section, {}).items():
            if alias not in values:
                continue
            value = values.pop(alias)
            if key in values and values[key] != value:
                raise ConfigurationError(f"Section '{section}' sets both {alias}={value!r} and {key}={values[key]!r}")
            values[key] = value
        return values

    def overlay_file(self, path):
        """Overlay a YAML run file onto the current settings."""
        self.overlay(read_sections(path))

    def lambda_grid(self):
        """Willingness-to-pay grid implied by the report settings."""
        if self.lambda_step <= 0 or self.lambda_max < self.lambda_min:
            raise ConfigurationError("Invalid willingness-to-pay grid settings")
        count = int(round((self.lambda_max - self.lambda_min) / self.lambda_step)) + 1
        return [self.lambda_min + i * self.lambda_step for i in range(count)]

    def get_safe_config(self):
        """Return the effective settings, used in provenance headers."""
        return {key: self.get(key) for key in sorted(self._config_items)}


def read_sections(path):
    """Read a YAML file of key-value sections into a dict."""
    if not os.path.exists(path):
        raise ConfigurationError(f"Configuration file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            sections = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Cannot parse {path}: {e}") from e
    if not isinstance(sections, dict):
        raise ConfigurationError(f"{path}: root element must be a mapping")
    return sections
