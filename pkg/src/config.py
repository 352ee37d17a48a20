"""
Application configuration management.

Two layers live here: process settings read from the environment
(``BaseConfig`` and its per-environment subclasses) and the run
configuration that describes one pipeline run (``RunConfig``), loaded
from a JSON file and overridden by command-line flags.
"""
import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.services.error_handler import ConfigurationError, NotFoundError


class BaseConfig(BaseSettings):
    """Base configuration class."""

    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=True,
        extra='ignore',
    )

    # Application
    PIPELINE_ENV: str = Field(default='development')
    DEBUG: bool = False
    TESTING: bool = False

    # Backbone weights
    PIPELINE_CACHE_DIR: str = Field(default_factory=lambda: os.path.expanduser('~/.cache/us-classifier'))
    DOWNLOAD_TIMEOUT: float = Field(default=60.0)

    # Workers used for image decoding
    NUM_WORKERS: int = Field(default=4, ge=1)

    # Logging
    LOG_LEVEL: str = Field(default='INFO')
    LOG_FORMAT: str = Field(default='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    LOG_FILE: str = Field(default='')
    LOG_JSON: bool = Field(default=False)

    @field_validator('LOG_LEVEL')
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        """Accept lower-case level names."""
        level = v.upper()
        if level not in {'DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'}:
            raise ValueError(f"unknown log level {v!r}")
        return level


class DevelopmentConfig(BaseConfig):
    """Development configuration."""
    DEBUG: bool = True
    LOG_LEVEL: str = 'DEBUG'


class ProductionConfig(BaseConfig):
    """Production configuration."""
    DEBUG: bool = False
    LOG_LEVEL: str = 'INFO'
    LOG_JSON: bool = True
    LOG_FILE: str = 'logs/pipeline.log'


class TestingConfig(BaseConfig):
    """Testing configuration."""
    TESTING: bool = True
    LOG_LEVEL: str = 'WARNING'
    NUM_WORKERS: int = 2


# Configuration mapping
CONFIG_MAP: Dict[str, Type[BaseConfig]] = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
}


def get_config(config_name: Optional[str] = None) -> BaseConfig:
    """Get configuration instance by name."""
    config_name = config_name or os.getenv('PIPELINE_ENV', 'development')
    config_class = CONFIG_MAP.get(config_name, DevelopmentConfig)
    return config_class()


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class Normalization(str, Enum):
    INCEPTION_MINUS1_1 = 'inception_minus1_1'
    UNIT_0_1 = 'unit_0_1'

    @property
    def value_range(self) -> Tuple[float, float]:
        """Interval a normalized tensor lives in."""
        if self is Normalization.INCEPTION_MINUS1_1:
            return (-1.0, 1.0)
        return (0.0, 1.0)


class BackboneName(str, Enum):
    INCEPTION_V3 = 'inception_v3'
    RESNET101 = 'resnet101'
    EFFICIENTNET_B7 = 'efficientnet_b7'
    RADIMAGENET_DENSENET = 'radimagenet_densenet'
    TINY_TEST_CNN = 'tiny_test_cnn'


class WeightsSource(str, Enum):
    IMAGENET = 'imagenet'
    RADIMAGENET = 'radimagenet'
    RANDOM = 'random'


class FreezePolicy(str, Enum):
    FREEZE_BACKBONE = 'freeze_backbone'
    TRAIN_ALL = 'train_all'


class ClassWeighting(str, Enum):
    NONE = 'none'
    BALANCED = 'balanced'


class Baseline(str, Enum):
    MEAN_COLOR = 'mean_color'
    GRAY = 'gray'


class Segmentation(str, Enum):
    SLIC = 'slic'
    GRID = 'grid'


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True, use_enum_values=False)


class PreprocessConfig(_StrictModel):
    """Target size and normalization of model inputs."""

    target_height: int = Field(default=256, ge=32)
    target_width: int = Field(default=256, ge=32)
    normalization: Normalization = Normalization.INCEPTION_MINUS1_1

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.target_height, self.target_width, 3)


class BackboneSpec(_StrictModel):
    """Which feature extractor to build and where its weights come from."""

    name: BackboneName = BackboneName.INCEPTION_V3
    weights_source: WeightsSource = WeightsSource.IMAGENET
    include_top: bool = False
    variant: str = Field(default='densenet121')
    weights_path: Optional[str] = None

    @field_validator('include_top')
    @classmethod
    def top_is_excluded(cls, v: bool) -> bool:
        if v:
            raise ValueError('include_top must be false; the classification head is replaced')
        return v

    @field_validator('variant')
    @classmethod
    def known_variant(cls, v: str) -> str:
        if v not in {'densenet121', 'densenet169', 'densenet201'}:
            raise ValueError(f"unsupported densenet variant {v!r}")
        return v

    @model_validator(mode='after')
    def check_weights_pairing(self) -> 'BackboneSpec':
        radimagenet_model = self.name is BackboneName.RADIMAGENET_DENSENET
        radimagenet_weights = self.weights_source is WeightsSource.RADIMAGENET
        if radimagenet_weights and not radimagenet_model:
            raise ValueError('radimagenet weights only pair with radimagenet_densenet')
        if radimagenet_model and self.weights_source is WeightsSource.IMAGENET:
            raise ValueError('radimagenet_densenet takes radimagenet or random weights')
        if self.name is BackboneName.TINY_TEST_CNN and self.weights_source is not WeightsSource.RANDOM:
            raise ValueError('tiny_test_cnn only supports random weights')
        return self


class HeadConfig(_StrictModel):
    """Hyperparameters of the custom classification head."""

    conv_filters: int = Field(default=1024, gt=0)
    conv_kernel: int = Field(default=3, gt=0)
    pool_size: int = Field(default=2, gt=0)
    dropout_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    dense_units: int = Field(default=512, gt=0)
    dense_activation: str = Field(default='relu', pattern='^(relu|linear)$')


class TrainConfig(_StrictModel):
    """Optimizer, schedule and sampling settings."""

    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(default=1e-7, gt=0.0)
    class_weighting: ClassWeighting = ClassWeighting.NONE
    freeze_policy: FreezePolicy = FreezePolicy.FREEZE_BACKBONE
    seed: int = Field(default=42, ge=0)


class SplitSpec(_StrictModel):
    """Train/validation/test fractions and the shuffling seed."""

    fractions: Tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = Field(default=42, ge=0)

    @field_validator('fractions')
    @classmethod
    def fractions_form_partition(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(f < 0.0 or f > 1.0 for f in v):
            raise ValueError('each fraction must lie in [0, 1]')
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(v)!r}")
        return v


class LimeConfig(_StrictModel):
    """Perturbation sampling and surrogate settings for LIME."""

    n_segments_target: int = Field(default=40, ge=1)
    n_samples: int = Field(default=1000, ge=2)
    kernel_width: float = Field(default=0.25, gt=0.0)
    baseline: Baseline = Baseline.MEAN_COLOR
    top_k: int = Field(default=5, ge=1)
    segmentation: Segmentation = Segmentation.SLIC
    compactness: float = Field(default=10.0, gt=0.0)
    ridge_alpha: float = Field(default=1e-3, ge=0.0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = Field(default=42, ge=0)


class PathsConfig(_StrictModel):
    data_dir: Optional[str] = None
    out_dir: str = 'runs/latest'
    checkpoint: Optional[str] = None


class RunConfig(_StrictModel):
    """Everything one pipeline run needs."""

    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    backbone: BackboneSpec = Field(default_factory=BackboneSpec)
    head: HeadConfig = Field(default_factory=HeadConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    split: SplitSpec = Field(default_factory=SplitSpec)
    lime: LimeConfig = Field(default_factory=LimeConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode='json'), indent=2) + '\n'


def _deep_merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def _error_path(exc: ValidationError) -> str:
    first = exc.errors()[0]
    return '.'.join(str(part) for part in first['loc'])


def parse_run_config(data: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Validate a raw mapping (plus overrides) into a RunConfig."""
    merged = _deep_merge(dict(data), overrides or {})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        path = _error_path(exc)
        message = exc.errors()[0]['msg']
        raise ConfigurationError(f"invalid config at {path}: {message}", path=path) from exc


def load_run_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Load a JSON run config; flag overrides win over file values."""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise NotFoundError('Config file', f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: malformed JSON ({exc.msg})", path='') from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top-level JSON value must be an object", path='')
    return parse_run_config(data, overrides)
