"""
Shared fixtures: deterministic runtime, synthetic datasets and tiny models.
"""
from pathlib import Path

import pytest
import torch

from src.config import BackboneName, BackboneSpec, HeadConfig, PreprocessConfig, WeightsSource
from src.extensions import seed_everything
from src.services.model_service import build_classifier
from src.services.synthetic_service import make_synthetic_dataset


@pytest.fixture(autouse=True)
def deterministic_runtime(monkeypatch, tmp_path_factory):
    """Seeded RNGs, deterministic kernels and a throwaway weights cache."""
    monkeypatch.setenv('PIPELINE_ENV', 'testing')
    monkeypatch.setenv('PIPELINE_CACHE_DIR', str(tmp_path_factory.mktemp('weights-cache')))
    torch.use_deterministic_algorithms(True, warn_only=True)
    seed_everything(0)


@pytest.fixture(scope='session')
def synthetic_dir(tmp_path_factory) -> Path:
    """32 separable 64x64 frames, 16 per class."""
    root = tmp_path_factory.mktemp('synthetic')
    make_synthetic_dataset(root, n_healthy=16, n_unhealthy=16, size=64, seed=0)
    return root


@pytest.fixture
def tiny_preprocess() -> PreprocessConfig:
    return PreprocessConfig(target_height=64, target_width=64)


@pytest.fixture
def tiny_head() -> HeadConfig:
    return HeadConfig(conv_filters=16, dense_units=32, dropout_rate=0.1)


@pytest.fixture
def tiny_backbone() -> BackboneSpec:
    return BackboneSpec(name=BackboneName.TINY_TEST_CNN, weights_source=WeightsSource.RANDOM)


@pytest.fixture
def tiny_model(tiny_backbone, tiny_head, tiny_preprocess):
    """Randomly initialized tiny_test_cnn classifier on 64x64 inputs."""
    torch.manual_seed(0)
    return build_classifier(tiny_backbone, tiny_head, tiny_preprocess)
