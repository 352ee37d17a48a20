"""
Training service: loss, class weights, the epoch loop and checkpoints.
"""
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError

from src.config import (
    BackboneSpec,
    ClassWeighting,
    FreezePolicy,
    HeadConfig,
    PreprocessConfig,
    TrainConfig,
    WeightsSource,
)
from src.models import ClassLabel, TrainingHistory
from src.services.error_handler import (
    CheckpointFormatError,
    CheckpointVersionError,
    InputError,
    NotFoundError,
    OutputError,
    TrainingDivergenceError,
)
from src.services.logging_service import get_logger, log_performance
from src.services.model_service import Classifier, build_classifier, predict_proba, set_trainable
from src.services.preprocess_service import ArrayDataset

logger = get_logger(__name__)

EPSILON = 1e-7
DECISION_THRESHOLD = 0.5
SCHEMA_VERSION = 1
WEIGHTS_FILE = 'weights.pt'
SIDECAR_FILE = 'model.json'
HISTORY_FILE = 'history.csv'

ArrayLike = Union[torch.Tensor, np.ndarray, Sequence[float]]


def _as_tensor(values: ArrayLike, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values if dtype is None else values.to(dtype)
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=dtype or torch.float64)


def binary_cross_entropy(
    y_true: ArrayLike,
    y_pred: ArrayLike,
    weights: Optional[ArrayLike] = None,
    eps: float = EPSILON,
) -> torch.Tensor:
    """Weighted mean of -[y ln p + (1 - y) ln(1 - p)], p clamped to [eps, 1 - eps].

    Returns a 0-d tensor that carries gradients when ``y_pred`` does.
    """
    pred = _as_tensor(y_pred)
    true = _as_tensor(y_true, pred.dtype)
    if true.shape != pred.shape or true.ndim != 1:
        raise InputError(f"label and prediction lengths differ: {tuple(true.shape)} vs {tuple(pred.shape)}")
    if len(pred) == 0:
        raise InputError("binary cross-entropy of an empty batch")

    pred = pred.clamp(eps, 1.0 - eps)
    losses = -(true * torch.log(pred) + (1.0 - true) * torch.log1p(-pred))
    if weights is None:
        return losses.mean()
    w = _as_tensor(weights, pred.dtype)
    if w.shape != losses.shape:
        raise InputError("sample weights must match the batch length")
    return (w * losses).sum() / w.sum()


def compute_class_weights(counts: Mapping[ClassLabel, int]) -> Dict[ClassLabel, float]:
    """Inverse-frequency weights w_c = N / (2 N_c)."""
    total = sum(counts.get(label, 0) for label in ClassLabel)
    weights = {}
    for label in ClassLabel:
        n = counts.get(label, 0)
        if n <= 0:
            raise InputError(f"class {label.value} has no samples; cannot weight it")
        weights[label] = total / (2.0 * n)
    return weights


def sample_weights_for(labels: np.ndarray, weighting: ClassWeighting) -> Optional[np.ndarray]:
    if ClassWeighting(weighting) is ClassWeighting.NONE:
        return None
    counts = {label: int((labels == label.code).sum()) for label in ClassLabel}
    class_weights = compute_class_weights(counts)
    lookup = np.array([class_weights[ClassLabel.HEALTHY], class_weights[ClassLabel.UNHEALTHY]])
    return lookup[labels.astype(np.int64)]


def binary_accuracy(labels: np.ndarray, scores: np.ndarray, threshold: float = DECISION_THRESHOLD) -> float:
    return float(np.mean((np.asarray(scores) >= threshold).astype(np.int64) == np.asarray(labels)))


@dataclass(frozen=True, eq=False)
class EpochResult:
    """Scores observed during one epoch, aligned with the dataset order."""

    epoch: int
    train_labels: np.ndarray
    train_scores: np.ndarray
    val_labels: np.ndarray
    val_scores: np.ndarray
    train_loss: float
    val_loss: float


def train(
    model: Classifier,
    train_set: ArrayDataset,
    val_set: ArrayDataset,
    config: TrainConfig,
    on_epoch_end: Optional[Callable[[EpochResult], None]] = None,
) -> Tuple[Classifier, TrainingHistory]:
    """Fixed-length Adam training with binary cross-entropy."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise InputError("training and validation sets must be nonempty")
    for name, dataset in (('train', train_set), ('val', val_set)):
        if tuple(dataset.images.shape[1:]) != model.input_shape:
            raise InputError(f"{name} images have shape {dataset.images.shape[1:]}, model expects {model.input_shape}")

    torch.manual_seed(config.seed)
    shuffler = torch.Generator().manual_seed(config.seed)
    set_trainable(model, config.freeze_policy)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        params,
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_epsilon,
    )

    dtype = next(model.parameters()).dtype
    images = torch.as_tensor(train_set.images, dtype=dtype)
    labels = torch.as_tensor(train_set.labels, dtype=dtype)
    sample_weights = sample_weights_for(train_set.labels, config.class_weighting)
    weights = torch.as_tensor(sample_weights, dtype=dtype) if sample_weights is not None else None

    history = TrainingHistory()
    n = len(train_set)
    logger.info(
        "training_started",
        epochs=config.epochs,
        n_train=n,
        n_val=len(val_set),
        trainable_parameters=sum(p.numel() for p in params),
        class_weighting=config.class_weighting.value,
    )

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        model.train()
        order = torch.randperm(n, generator=shuffler)
        scores = np.zeros(n, dtype=np.float64)
        loss_sum = 0.0
        weight_sum = 0.0

        for start in range(0, n, config.batch_size):
            index = order[start:start + config.batch_size]
            batch_weights = weights[index] if weights is not None else None
            probs = model(images[index])
            loss = binary_cross_entropy(labels[index], probs, batch_weights)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(epoch, float(loss))

            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

            batch_weight = float(batch_weights.sum()) if batch_weights is not None else float(len(index))
            loss_sum += float(loss.detach()) * batch_weight
            weight_sum += batch_weight
            scores[index.numpy()] = probs.detach().double().numpy()

        train_loss = loss_sum / weight_sum
        train_accuracy = binary_accuracy(train_set.labels, scores)

        val_scores = predict_proba(model, val_set.images, batch_size=config.batch_size)
        val_loss = float(binary_cross_entropy(val_set.labels, val_scores))
        if not math.isfinite(val_loss):
            raise TrainingDivergenceError(epoch, val_loss)
        val_accuracy = binary_accuracy(val_set.labels, val_scores)

        history.record(train_loss, train_accuracy, val_loss, val_accuracy)
        log_performance(logger, f"epoch {epoch}", time.perf_counter() - started, {
            "train_loss": round(train_loss, 6),
            "train_accuracy": round(train_accuracy, 6),
            "val_loss": round(val_loss, 6),
            "val_accuracy": round(val_accuracy, 6),
        })

        if on_epoch_end is not None:
            on_epoch_end(EpochResult(
                epoch=epoch,
                train_labels=train_set.labels.copy(),
                train_scores=scores,
                val_labels=val_set.labels.copy(),
                val_scores=val_scores,
                train_loss=train_loss,
                val_loss=val_loss,
            ))

    model.eval()
    logger.info("training_completed", epochs=len(history), final_val_accuracy=history.val_accuracy[-1])
    return model, history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    model: Classifier,
    history: TrainingHistory,
    path: Path,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write weights, sidecar JSON and history CSV into directory ``path``."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        torch.save(model.state_dict(), path / WEIGHTS_FILE)
    except OSError as exc:
        raise OutputError(path, exc) from exc

    sidecar = {
        'schema_version': SCHEMA_VERSION,
        'backbone': model.backbone.spec.model_dump(mode='json'),
        'head': model.head.config.model_dump(mode='json'),
        'preprocess': model.preprocess.model_dump(mode='json'),
        'feature_shape': list(model.backbone.feature_shape),
        'freeze_policy': (FreezePolicy.FREEZE_BACKBONE if model.backbone_frozen else FreezePolicy.TRAIN_ALL).value,
        'metadata': metadata or {},
    }
    (path / SIDECAR_FILE).write_text(json.dumps(sidecar, indent=2) + '\n', encoding='utf-8')
    history.to_csv(path / HISTORY_FILE)
    logger.info("checkpoint_saved", path=str(path), epochs=len(history))
    return path


def read_sidecar(path: Path) -> Dict[str, Any]:
    """Parse and version-check a checkpoint sidecar without touching weights."""
    path = Path(path)
    sidecar_path = path / SIDECAR_FILE
    if not path.exists() or not sidecar_path.exists():
        raise NotFoundError('Checkpoint', f"checkpoint not found: {path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{sidecar_path}: unreadable sidecar") from exc
    if not isinstance(sidecar, dict):
        raise CheckpointFormatError(f"{sidecar_path}: sidecar must be a JSON object")
    version = sidecar.get('schema_version')
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(version, SCHEMA_VERSION)
    return sidecar


def load_checkpoint(path: Path) -> Tuple[Classifier, TrainingHistory]:
    """Rebuild the classifier described by the sidecar and load its weights."""
    path = Path(path)
    sidecar = read_sidecar(path)
    try:
        backbone = BackboneSpec.model_validate(sidecar['backbone'])
        head = HeadConfig.model_validate(sidecar['head'])
        preprocess = PreprocessConfig.model_validate(sidecar['preprocess'])
        freeze_policy = FreezePolicy(sidecar.get('freeze_policy', FreezePolicy.FREEZE_BACKBONE.value))
    except (KeyError, ValueError, ValidationError) as exc:
        raise CheckpointFormatError(f"{path / SIDECAR_FILE}: invalid model description ({exc})") from exc

    # Architecture only; the stored weights replace any initialization.
    skeleton = backbone.model_copy(update={'weights_source': WeightsSource.RANDOM, 'weights_path': None})
    model = build_classifier(skeleton, head, preprocess)
    if list(model.backbone.feature_shape) != list(sidecar.get('feature_shape', [])):
        raise CheckpointFormatError(f"{path}: feature shape differs from the recorded one")

    try:
        state = torch.load(path / WEIGHTS_FILE, map_location='cpu', weights_only=True)
        model.load_state_dict(state)
    except FileNotFoundError as exc:
        raise CheckpointFormatError(f"{path}: missing {WEIGHTS_FILE}") from exc
    except Exception as exc:
        raise CheckpointFormatError(f"{path / WEIGHTS_FILE}: corrupt weights ({exc})") from exc

    model.backbone.spec = backbone
    set_trainable(model, freeze_policy)
    model.eval()

    history_path = path / HISTORY_FILE
    history = TrainingHistory.from_csv(history_path) if history_path.exists() else TrainingHistory()
    logger.info("checkpoint_loaded", path=str(path), backbone=backbone.name.value)
    return model, history
