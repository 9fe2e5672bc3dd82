"""
Pipeline configuration: nested per-module settings loaded from YAML over the
built-in defaults, plus the manifest every command writes beside its output.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from errors import ConfigError, DataError
from instance_aggregation import AggregationConfig
from point_predictors import OracleNoise
from pose_evaluation import MatchConfig
from prediction_losses import LossWeights
from scale_normalization import SncsConfig
from scene_generator import SceneGenConfig
from sim_to_real import DomainRandomizationConfig, MaskGenConfig

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = '1.0.0'


@dataclass(frozen=True)
class PathsConfig:
    catalog: str = None
    scenes: str = 'scenes'
    predictions: str = 'oracle'
    reports: str = 'reports'


@dataclass(frozen=True)
class SweepConfig:
    """Scale-sensitivity experiment on close-packed rows of one object."""

    scales: tuple = (0.05, 0.10, 0.20, 0.30, 0.50)
    model: str = 'thinboard'
    scenes_per_scale: int = 3
    instances: int = 2
    spacing_factor: float = 0.6
    sigma_translation_rel: float = 0.02
    bandwidth: float = 0.05
    plot: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'scales', tuple(float(s) for s in self.scales))
        if not self.scales or min(self.scales) <= 0:
            raise ConfigError("sweep.scales must be positive")
        if self.scenes_per_scale < 1 or self.instances < 1:
            raise ConfigError("sweep.scenes_per_scale and sweep.instances must be >= 1")
        if not self.spacing_factor > 0 or not self.bandwidth > 0:
            raise ConfigError("sweep.spacing_factor and sweep.bandwidth must be > 0")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    sncs: SncsConfig = field(default_factory=SncsConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    oracle: OracleNoise = field(default_factory=OracleNoise)
    scenegen: SceneGenConfig = field(default_factory=SceneGenConfig)
    mask: MaskGenConfig = field(default_factory=MaskGenConfig)
    domain_randomization: DomainRandomizationConfig = field(default_factory=DomainRandomizationConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    sweep: SweepConfig = field(default_factory=SweepConfig)


def _merge(current, data, prefix):
    """Dataclass copy of current with data applied field by field."""
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(current)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    values = {}
    for key, value in data.items():
        old = getattr(current, key)
        if dataclasses.is_dataclass(old):
            value = _merge(old, value, f"{prefix}{key}.")
        elif isinstance(old, tuple) and isinstance(value, list):
            value = tuple(value)
        values[key] = value
    try:
        return dataclasses.replace(current, **values)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'config'}: {e}") from e


def load_config(path=None, overrides=None):
    """
    Defaults, then the YAML file at path, then an overrides mapping.
    Unknown keys are rejected.
    """
    config = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})") from e
        config = _merge(config, data, '')
        logger.info("loaded config", extra={'path': str(path)})
    if overrides:
        config = _merge(config, overrides, '')
    return config


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(config):
    """Plain dicts and lists, ready for yaml.safe_dump."""
    return _plain(config)


def write_manifest(out_dir, command, config, **extra):
    """manifest.yaml: command, artifact version, seed and the resolved config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        'command': command,
        'artifact_version': ARTIFACT_VERSION,
        'seed': config.seed,
        'config': config_to_dict(config),
    }
    manifest.update(_plain(extra))
    with open(out_dir / 'manifest.yaml', 'w') as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return out_dir / 'manifest.yaml'


def read_manifest(out_dir):
    path = Path(out_dir) / 'manifest.yaml'
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with open(path) as f:
        return yaml.safe_load(f)
