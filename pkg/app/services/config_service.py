"""Configuration management service.

Loads the bundled ``configs/default_config.json``, overlays a user config file
(a flat JSON object), validates every key and expands named field presets into
modal coefficients. Exposes deep-copied getters and typed builders for the
domain, the time grid and the solver settings.
"""
import copy
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from .bvp_service import SCHEMES
from .spectral_service import Field, SpectralDomain, TimeGrid, build_domain, project_profile
from .verification_service import VerificationSettings
from ..utils.errors import ArgumentError, ConfigError
from ..utils.runtime_paths import get_config_dir, get_definitions_path

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_NAME = 'default_config.json'
PRESETS_FILE = 'field_presets.json'


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_optional_number(value) -> bool:
    return value is None or _is_number(value)


def _is_field_spec(value) -> bool:
    return isinstance(value, str) or (isinstance(value, list) and all(_is_number(v) for v in value))


def _is_number_list(value) -> bool:
    return isinstance(value, list) and len(value) > 0 and all(_is_number(v) for v in value)


# Every accepted key and the check its value must satisfy
KEY_CHECKS = {
    'omega': lambda v: isinstance(v, list) and len(v) == 2 and all(_is_number(x) for x in v),
    'num_modes': lambda v: _is_int(v) and v >= 1,
    't_start': _is_number,
    'T': _is_number,
    'n_steps': lambda v: _is_int(v) and v >= 1,
    'y0': _is_field_spec,
    'z_d': _is_field_spec,
    'r': _is_number,
    'M': lambda v: _is_number(v) and v >= 0,
    'tau': _is_number,
    'M0': lambda v: v is None or (_is_number(v) and v > 0),
    'k_max': lambda v: _is_int(v) and v >= 1,
    'tol_bvp': lambda v: _is_number(v) and v > 0,
    'tol_M': lambda v: _is_number(v) and v > 0,
    'tol_tau': lambda v: _is_number(v) and v > 0,
    'max_iter': lambda v: _is_int(v) and v >= 1,
    'scheme': lambda v: v in SCHEMES,
    't0': _is_number,
    'feedback_tau': _is_optional_number,
    'seed': lambda v: _is_int(v) and 0 <= v < 2 ** 64,
    'verify_tau_fractions': lambda v: _is_number_list(v) and all(0 <= x < 1 for x in v),
    'verify_M_multiples': lambda v: _is_number_list(v) and all(x >= 0 for x in v) and any(x > 0 for x in v),
    'verify_r_fractions': lambda v: _is_number_list(v) and all(0 < x < 1 for x in v),
    'verify_competitors': lambda v: _is_int(v) and v >= 1,
    'verify_lipschitz_pairs': lambda v: _is_int(v) and v >= 0,
    'verify_instances': lambda v: _is_int(v) and v >= 1,
    'verify_feedback_steps': lambda v: _is_int(v) and v >= 2,
    'verify_workers': lambda v: _is_int(v) and v >= 1,
}


@dataclass(frozen=True)
class ProblemConfig:
    """Validated, typed view of the flat configuration."""
    omega: tuple[float, float]
    num_modes: int
    t_start: float
    T: float
    n_steps: int
    y0: Any
    z_d: Any
    r: float
    M: float
    tau: float
    M0: float | None
    k_max: int
    tol_bvp: float
    tol_M: float
    tol_tau: float
    max_iter: int
    scheme: str
    t0: float
    feedback_tau: float | None
    seed: int
    verify_tau_fractions: tuple[float, ...]
    verify_M_multiples: tuple[float, ...]
    verify_r_fractions: tuple[float, ...]
    verify_competitors: int
    verify_lipschitz_pairs: int
    verify_instances: int
    verify_feedback_steps: int
    verify_workers: int

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProblemConfig":
        values = dict(data)
        for key, value in values.items():
            if isinstance(value, list) and key.startswith('verify_'):
                values[key] = tuple(float(v) for v in value)
        values['omega'] = tuple(float(v) for v in data['omega'])
        return cls(**values)


class ConfigService:
    def __init__(self, config_path: str | None = None, overrides: Dict[str, Any] | None = None,
                 config_dir: str | None = None):
        self.config_dir = config_dir or get_config_dir()
        self.default_config_path = os.path.join(self.config_dir, DEFAULT_CONFIG_NAME)
        self.config_path = config_path
        self._presets = None

        defaults = self._load_config_from_file(self.default_config_path)
        if defaults is None:
            raise ConfigError(f"Default configuration missing or unreadable: {self.default_config_path}")

        self.active_config = copy.deepcopy(defaults)
        if config_path is not None:
            user_config = self._load_config_from_file(config_path)
            if user_config is None:
                raise ConfigError(f"Configuration file missing or unreadable: {config_path}")
            self._overlay(user_config, source=config_path)
        if overrides:
            self._overlay(overrides, source='command line')
        self.validate()
        logger.info(f"ConfigService initialized ({config_path or 'defaults only'})")

    def _load_config_from_file(self, file_path):
        """Load a JSON object from file, returning a dict or None when missing or invalid."""
        if not os.path.exists(file_path):
            logger.info(f"Config file not found: {file_path}")
            return None
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Error decoding JSON from {file_path}: {e}")
            return None
        except OSError as e:
            logger.error(f"Error reading config file {file_path}: {e}")
            return None
        if not isinstance(config_data, dict):
            raise ConfigError(f"{file_path} must hold a flat JSON object")
        logger.info(f"Successfully loaded configuration from {file_path}")
        return config_data

    def _overlay(self, values: Dict[str, Any], source: str) -> None:
        unknown = sorted(set(values) - set(KEY_CHECKS))
        if unknown:
            raise ConfigError(f"Unknown configuration keys in {source}: {', '.join(unknown)}")
        for key, value in values.items():
            if isinstance(value, dict):
                raise ConfigError(f"Key '{key}' in {source}: nested objects are not supported")
            self.active_config[key] = copy.deepcopy(value)
        logger.debug(f"Applied {len(values)} configuration values from {source}")

    def validate(self) -> None:
        config = self.active_config
        missing = sorted(set(KEY_CHECKS) - set(config))
        if missing:
            raise ConfigError(f"Configuration is missing keys: {', '.join(missing)}")
        for key, check in KEY_CHECKS.items():
            if not check(config[key]):
                raise ConfigError(f"Invalid value for '{key}': {config[key]!r}")
        a, b = config['omega']
        if not 0.0 <= a < b <= 1.0:
            raise ConfigError(f"omega must satisfy 0 <= a < b <= 1, got ({a}, {b})")
        if not config['t_start'] < config['T']:
            raise ConfigError(f"t_start={config['t_start']} must be below T={config['T']}")
        if not config['t_start'] <= config['tau'] < config['T']:
            raise ConfigError(f"tau={config['tau']} must lie in [t_start, T)")
        if not config['t_start'] <= config['t0'] < config['T']:
            raise ConfigError(f"t0={config['t0']} must lie in [t_start, T)")
        if config['feedback_tau'] is not None and not config['t0'] <= config['feedback_tau'] < config['T']:
            raise ConfigError(f"feedback_tau={config['feedback_tau']} must lie in [t0, T)")
        if not config['r'] > 0:
            raise ConfigError(f"r must be positive, got {config['r']}")
        for key in ('y0', 'z_d'):
            spec = config[key]
            if isinstance(spec, str) and spec not in self.presets:
                raise ConfigError(f"Unknown preset '{spec}' for {key}; known: {', '.join(sorted(self.presets))}")
            if isinstance(spec, list) and len(spec) > config['num_modes']:
                raise ConfigError(f"{key} has {len(spec)} coefficients but num_modes={config['num_modes']}")

    @property
    def presets(self) -> Dict[str, Dict[str, Any]]:
        if self._presets is None:
            path = get_definitions_path(PRESETS_FILE)
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    self._presets = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"Could not read field presets from {path}: {e}") from e
        return self._presets

    def get_config(self) -> Dict[str, Any]:
        """Return a deep copy of the active configuration."""
        return copy.deepcopy(self.active_config)

    def get(self, key: str):
        if key not in KEY_CHECKS:
            raise KeyError(key)
        return copy.deepcopy(self.active_config[key])

    def problem_config(self) -> ProblemConfig:
        return ProblemConfig.from_dict(self.active_config)

    def build_domain(self) -> SpectralDomain:
        return build_domain(self.active_config['omega'], self.active_config['num_modes'])

    def build_grid(self, refine: int = 0) -> TimeGrid:
        config = self.active_config
        try:
            return TimeGrid(float(config['t_start']), float(config['T']), config['n_steps']).refined(refine)
        except ArgumentError as e:
            raise ConfigError(str(e)) from e

    def build_field(self, domain: SpectralDomain, key: str) -> Field:
        """Expand the y0 / z_d spec (preset name or coefficient list) into modal coefficients."""
        spec = self.active_config[key]
        if isinstance(spec, list):
            coeffs = np.zeros(domain.num_modes)
            coeffs[:len(spec)] = spec
            return coeffs
        return expand_preset(domain, self.presets[spec], name=spec)

    def verification_settings(self) -> VerificationSettings:
        config = self.problem_config()
        return VerificationSettings(
            tau_fractions=config.verify_tau_fractions,
            M_multiples=config.verify_M_multiples,
            r_fractions=config.verify_r_fractions,
            n_competitors=config.verify_competitors,
            n_lipschitz_pairs=config.verify_lipschitz_pairs,
            n_instances=config.verify_instances,
            seed=config.seed,
            tol_bvp=config.tol_bvp,
            tol_M=config.tol_M,
            tol_tau=config.tol_tau,
            feedback_steps=config.verify_feedback_steps,
            max_workers=config.verify_workers,
        )


def expand_preset(domain: SpectralDomain, preset: Dict[str, Any], name: str = 'preset') -> Field:
    """Modal coefficients of a named profile; deterministic for a given domain."""
    kind = preset.get('kind')
    amplitude = float(preset.get('amplitude', 1.0))
    if kind == 'zero':
        return domain.zero_field()
    if kind == 'mode':
        index = int(preset['index'])
        coeffs = domain.zero_field()
        if 1 <= index <= domain.num_modes:
            coeffs[index - 1] = amplitude
        else:
            logger.warning(f"Preset '{name}' selects mode {index}, outside the {domain.num_modes} kept modes")
        return coeffs
    if kind == 'indicator':
        low, high = float(preset['low']), float(preset['high'])
        k = np.arange(1, domain.num_modes + 1) * math.pi
        return amplitude * math.sqrt(2.0) * (np.cos(k * low) - np.cos(k * high)) / k
    if kind == 'bump':
        center, width = float(preset['center']), float(preset['width'])

        def profile(x):
            return amplitude * math.cos(0.5 * math.pi * (x - center) / width) ** 2

        return project_profile(domain, profile, (center - width, center + width))
    raise ConfigError(f"Preset '{name}' has unknown kind {kind!r}")
