"""
Model service: backbone registry, custom head, assembly, freezing and
inference.

Tensors enter the classifier channels-last (N x H x W x 3), matching the
preprocessing output, and are transposed to channels-first internally.
"""
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError
from torch import nn
from torchvision import models as tv_models

from src.config import BackboneName, BackboneSpec, FreezePolicy, HeadConfig, PreprocessConfig, WeightsSource
from src.models import ImageTensor
from src.services.error_handler import (
    AssemblyError,
    ConfigurationError,
    RegistryError,
    ShapeError,
    WeightsError,
)
from src.services.logging_service import get_logger
from src.services.preprocess_service import as_batch
from src.services.weights_service import fetch_weights, load_state_dict

logger = get_logger(__name__)

FeatureShape = Tuple[int, int, int]


class TinyTestCNN(nn.Module):
    """Three conv blocks (8, 16, 32 channels); 64x64x3 maps to 8x8x32."""

    out_channels = 32

    def __init__(self):
        super().__init__()
        blocks = []
        in_channels = 3
        for channels in (8, 16, 32):
            blocks += [
                nn.Conv2d(in_channels, channels, kernel_size=3, padding=1),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ]
            in_channels = channels
        self.features = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


class FeatureExtractor(nn.Module):
    """Backbone without its classification top; NCHW in, NCHW feature map out."""

    def __init__(self, body: nn.Module, spec: BackboneSpec, input_shape: Tuple[int, int, int]):
        super().__init__()
        self.body = body
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.feature_shape: FeatureShape = self._measure_feature_shape()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)

    @torch.no_grad()
    def _measure_feature_shape(self) -> FeatureShape:
        height, width, channels = self.input_shape
        was_training = self.training
        self.eval()
        param = next(self.body.parameters())
        out = self.body(torch.zeros(1, channels, height, width, dtype=param.dtype))
        self.train(was_training)
        if out.ndim != 4:
            raise ShapeError(f"backbone {self.spec.name.value} produced a {out.ndim}-D output")
        return (int(out.shape[2]), int(out.shape[3]), int(out.shape[1]))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackboneEntry:
    build: Callable[[BackboneSpec], nn.Module]
    imagenet_weights: Optional[str] = None
    extract: Callable[[nn.Module], nn.Module] = lambda model: model


def _inception_body(model: nn.Module) -> nn.Module:
    names = [
        'Conv2d_1a_3x3', 'Conv2d_2a_3x3', 'Conv2d_2b_3x3', 'maxpool1',
        'Conv2d_3b_1x1', 'Conv2d_4a_3x3', 'maxpool2',
        'Mixed_5b', 'Mixed_5c', 'Mixed_5d', 'Mixed_6a', 'Mixed_6b', 'Mixed_6c',
        'Mixed_6d', 'Mixed_6e', 'Mixed_7a', 'Mixed_7b', 'Mixed_7c',
    ]
    return nn.Sequential(OrderedDict((name, getattr(model, name)) for name in names))


def _resnet_body(model: nn.Module) -> nn.Module:
    names = ['conv1', 'bn1', 'relu', 'maxpool', 'layer1', 'layer2', 'layer3', 'layer4']
    return nn.Sequential(OrderedDict((name, getattr(model, name)) for name in names))


def _densenet_body(model: nn.Module) -> nn.Module:
    return nn.Sequential(OrderedDict([('features', model.features), ('relu', nn.ReLU())]))


BACKBONE_REGISTRY: Dict[BackboneName, BackboneEntry] = {
    BackboneName.INCEPTION_V3: BackboneEntry(
        # aux_logits kept so published state dicts load; the aux branch is never called
        build=lambda spec: tv_models.Inception3(aux_logits=True, transform_input=False, init_weights=True),
        imagenet_weights='Inception_V3_Weights.IMAGENET1K_V1',
        extract=_inception_body,
    ),
    BackboneName.RESNET101: BackboneEntry(
        build=lambda spec: tv_models.resnet101(weights=None),
        imagenet_weights='ResNet101_Weights.IMAGENET1K_V1',
        extract=_resnet_body,
    ),
    BackboneName.EFFICIENTNET_B7: BackboneEntry(
        build=lambda spec: tv_models.efficientnet_b7(weights=None),
        imagenet_weights='EfficientNet_B7_Weights.IMAGENET1K_V1',
        extract=lambda model: model.features,
    ),
    BackboneName.RADIMAGENET_DENSENET: BackboneEntry(
        build=lambda spec: getattr(tv_models, spec.variant)(weights=None),
        extract=_densenet_body,
    ),
    BackboneName.TINY_TEST_CNN: BackboneEntry(build=lambda spec: TinyTestCNN()),
}


def make_backbone_spec(name: str, weights_source: str = 'random', **kwargs) -> BackboneSpec:
    """Validated BackboneSpec; bad names or pairings raise RegistryError."""
    try:
        return BackboneSpec(name=name, weights_source=weights_source, **kwargs)
    except ValidationError as exc:
        raise RegistryError(f"invalid backbone {name!r} with {weights_source!r} weights: {exc.errors()[0]['msg']}") from exc


def _load_pretrained(model: nn.Module, spec: BackboneSpec, entry: BackboneEntry, cache_dir: Optional[Path]) -> None:
    if spec.weights_source is WeightsSource.IMAGENET:
        from src.extensions import get_settings

        settings = get_settings()
        weights = tv_models.get_weight(entry.imagenet_weights)
        path = fetch_weights(
            weights.url,
            Path(cache_dir or settings.PIPELINE_CACHE_DIR),
            timeout=settings.DOWNLOAD_TIMEOUT,
        )
        state = load_state_dict(path)
        strict = True
    else:
        if not spec.weights_path:
            raise WeightsError("radimagenet weights need backbone.weights_path")
        state = load_state_dict(Path(spec.weights_path))
        strict = False

    result = model.load_state_dict(state, strict=strict)
    if not strict:
        missing = [key for key in result.missing_keys if not key.startswith('classifier.')]
        if missing:
            raise WeightsError(
                f"weights file leaves {len(missing)} backbone tensors unset",
                {"missing": missing[:10]},
            )
    logger.info("pretrained_weights_loaded", backbone=spec.name.value, source=spec.weights_source.value)


def build_backbone(
    spec: Union[BackboneSpec, str],
    input_shape: Tuple[int, int, int],
    cache_dir: Optional[Path] = None,
) -> FeatureExtractor:
    """Headless feature extractor for ``spec`` with its output shape measured."""
    if not isinstance(spec, BackboneSpec):
        spec = make_backbone_spec(str(spec))
    try:
        entry = BACKBONE_REGISTRY[BackboneName(spec.name)]
    except (KeyError, ValueError):
        raise RegistryError(f"unknown backbone {spec.name!r}") from None

    if len(input_shape) != 3 or input_shape[2] != 3:
        raise ShapeError(f"backbone input must be H x W x 3, got {tuple(input_shape)}")

    model = entry.build(spec)
    if spec.weights_source is not WeightsSource.RANDOM:
        _load_pretrained(model, spec, entry, cache_dir)

    extractor = FeatureExtractor(entry.extract(model), spec, input_shape)
    logger.info("backbone_built", backbone=spec.name.value, feature_shape=list(extractor.feature_shape))
    return extractor


# ---------------------------------------------------------------------------
# Head
# ---------------------------------------------------------------------------

class ClassificationHead(nn.Sequential):
    """Layer norm, conv + ReLU, max-pool, dropout, flatten, dense, output logit."""

    def __init__(self, config: HeadConfig, feature_shape: FeatureShape):
        height, width, channels = feature_shape
        pooled = (height // config.pool_size) * (width // config.pool_size)
        dense_activation = nn.ReLU() if config.dense_activation == 'relu' else nn.Identity()
        super().__init__(OrderedDict([
            ('layer_norm', nn.GroupNorm(num_groups=1, num_channels=channels)),
            ('conv', nn.Conv2d(channels, config.conv_filters, kernel_size=config.conv_kernel, padding='same')),
            ('conv_activation', nn.ReLU()),
            ('pool', nn.MaxPool2d(config.pool_size)),
            ('dropout', nn.Dropout(config.dropout_rate)),
            ('flatten', nn.Flatten()),
            ('dense', nn.Linear(config.conv_filters * pooled, config.dense_units)),
            ('dense_activation', dense_activation),
            ('output', nn.Linear(config.dense_units, 1)),
        ]))
        self.config = config
        self.feature_shape: FeatureShape = tuple(feature_shape)  # type: ignore[assignment]


def head_parameter_count(config: HeadConfig, feature_shape: FeatureShape) -> int:
    """Closed-form number of head parameters."""
    height, width, channels = feature_shape
    pooled = (height // config.pool_size) * (width // config.pool_size)
    norm = 2 * channels
    conv = config.conv_filters * channels * config.conv_kernel ** 2 + config.conv_filters
    dense = config.conv_filters * pooled * config.dense_units + config.dense_units
    output = config.dense_units + 1
    return norm + conv + dense + output


def build_head(config: HeadConfig, feature_shape: FeatureShape) -> ClassificationHead:
    """Custom head for a backbone emitting ``feature_shape`` (H', W', C)."""
    if len(feature_shape) != 3:
        raise ConfigurationError(f"feature shape must be 3-D, got {tuple(feature_shape)}", path='head')
    height, width, _ = feature_shape
    if min(height, width) < config.conv_kernel:
        raise ConfigurationError(
            f"feature map {height}x{width} is smaller than conv_kernel {config.conv_kernel}",
            path='head.conv_kernel',
        )
    if min(height, width) < config.pool_size:
        raise ConfigurationError(
            f"feature map {height}x{width} is smaller than pool_size {config.pool_size}",
            path='head.pool_size',
        )
    return ClassificationHead(config, feature_shape)


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

class Classifier(nn.Module):
    """Backbone + head; ``forward`` returns one probability per input."""

    def __init__(
        self,
        backbone: FeatureExtractor,
        head: ClassificationHead,
        preprocess: Optional[PreprocessConfig] = None,
    ):
        super().__init__()
        self.backbone = backbone
        self.head = head
        self.preprocess = preprocess or PreprocessConfig(
            target_height=backbone.input_shape[0], target_width=backbone.input_shape[1]
        )

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return self.backbone.input_shape

    @property
    def backbone_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.backbone.parameters())

    def train(self, mode: bool = True) -> 'Classifier':
        # A frozen backbone stays in inference mode so its normalization statistics stay fixed.
        self.training = mode
        self.head.train(mode)
        self.backbone.train(mode and not self.backbone_frozen)
        return self

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid scores for an N x H x W x 3 batch."""
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"expected batch of shape (N, {', '.join(map(str, self.input_shape))}), got {tuple(x.shape)}"
            )
        features = self.backbone(x.permute(0, 3, 1, 2))
        return self.head(features).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


def assemble_model(
    backbone: FeatureExtractor,
    head: ClassificationHead,
    preprocess: Optional[PreprocessConfig] = None,
) -> Classifier:
    """Join a backbone and a head built for its measured feature shape."""
    if tuple(head.feature_shape) != tuple(backbone.feature_shape):
        raise AssemblyError(
            f"head expects features {head.feature_shape}, backbone produces {backbone.feature_shape}"
        )
    if preprocess is not None and preprocess.input_shape != backbone.input_shape:
        raise AssemblyError(f"preprocess shape {preprocess.input_shape} differs from backbone input {backbone.input_shape}")
    return Classifier(backbone, head, preprocess)


def build_classifier(
    backbone_spec: BackboneSpec,
    head_config: HeadConfig,
    preprocess: PreprocessConfig,
    cache_dir: Optional[Path] = None,
) -> Classifier:
    """build_backbone -> build_head -> assemble_model in one call."""
    backbone = build_backbone(backbone_spec, preprocess.input_shape, cache_dir=cache_dir)
    head = build_head(head_config, backbone.feature_shape)
    return assemble_model(backbone, head, preprocess)


def set_trainable(model: Classifier, policy: Union[FreezePolicy, str]) -> Classifier:
    """Freeze the backbone (head stays trainable) or unfreeze everything."""
    policy = FreezePolicy(policy)
    for param in model.backbone.parameters():
        param.requires_grad_(policy is FreezePolicy.TRAIN_ALL)
    for param in model.head.parameters():
        param.requires_grad_(True)
    model.train(model.training)
    logger.debug("trainable_policy_applied", policy=policy.value, trainable=count_parameters(model, trainable_only=True))
    return model


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def predict_proba(
    model: Classifier,
    batch: Union[ImageTensor, Sequence[ImageTensor], np.ndarray],
    batch_size: int = 32,
) -> np.ndarray:
    """Probabilities (float64) for a normalized batch, in input order."""
    array = as_batch(batch)
    if array.ndim != 4 or tuple(array.shape[1:]) != model.input_shape:
        raise ShapeError(f"input batch shape {tuple(array.shape)} does not match model input {model.input_shape}")

    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    outputs = []
    try:
        with torch.no_grad():
            for start in range(0, len(array), batch_size):
                chunk = torch.as_tensor(array[start:start + batch_size], dtype=dtype)
                logits = model.logits(chunk).double()
                outputs.append(torch.sigmoid(logits).numpy())
    finally:
        model.train(was_training)
    if not outputs:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(outputs)


def zero_output_layer(model: Classifier) -> Classifier:
    """Zero the final dense layer so every prediction is exactly 0.5."""
    with torch.no_grad():
        model.head.output.weight.zero_()
        model.head.output.bias.zero_()
    return model
