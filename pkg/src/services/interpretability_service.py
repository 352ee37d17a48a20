"""
Interpretability service: LIME superpixel explanations and gradient
saliency maps, plus their overlay rendering.
"""
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image, ImageDraw, ImageFont
from skimage.segmentation import mark_boundaries, slic
from sklearn.linear_model import Ridge
from sklearn.metrics import pairwise_distances
from torch import nn

from src.config import Baseline, LimeConfig, Segmentation
from src.models import Explanation, ImageTensor, SaliencyMap, SegmentMap
from src.services.error_handler import ConfigurationError, InputError, OutputError, UnsupportedOperationError
from src.services.logging_service import get_logger
from src.services.model_service import Classifier, predict_proba

logger = get_logger(__name__)

Scorer = Callable[[np.ndarray], np.ndarray]

# Accepted deviation of the superpixel count from its target before falling back to the grid.
SEGMENT_COUNT_TOLERANCE = 0.3
CAPTION_HEIGHT = 18
HIGHLIGHT_COLOR = (1.0, 0.85, 0.0)
SALIENCY_ALPHA = 0.5


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def grid_segments(height: int, width: int, n_segments_target: int) -> SegmentMap:
    """Rectangular grid with roughly ``n_segments_target`` cells."""
    rows = int(np.clip(round(np.sqrt(n_segments_target * height / width)), 1, height))
    cols = int(np.clip(round(n_segments_target / rows), 1, width))
    row_index = (np.arange(height) * rows) // height
    col_index = (np.arange(width) * cols) // width
    labels = row_index[:, None] * cols + col_index[None, :]
    return SegmentMap(labels=labels, n_segments=rows * cols)


def _dense_labels(labels: np.ndarray) -> SegmentMap:
    _, inverse = np.unique(labels, return_inverse=True)
    inverse = inverse.reshape(labels.shape)
    return SegmentMap(labels=inverse, n_segments=int(inverse.max()) + 1)


def segment_superpixels(
    image: ImageTensor,
    n_segments_target: int,
    method: Union[Segmentation, str] = Segmentation.SLIC,
    compactness: float = 10.0,
) -> SegmentMap:
    """Grid-seeded SLIC superpixels; constant images fall back to the seed grid."""
    height, width, _ = image.shape
    if n_segments_target < 1 or n_segments_target > height * width:
        raise InputError(f"cannot cut a {height}x{width} image into {n_segments_target} segments")

    method = Segmentation(method)
    if method is Segmentation.GRID or np.ptp(image.data) == 0:
        return grid_segments(height, width, n_segments_target)

    low, high = image.value_range
    unit = (image.data - low) / (high - low)
    labels = slic(
        unit,
        n_segments=n_segments_target,
        compactness=compactness,
        start_label=0,
        channel_axis=-1,
        enforce_connectivity=True,
    )
    segment_map = _dense_labels(labels)
    deviation = abs(segment_map.n_segments - n_segments_target) / n_segments_target
    if deviation > SEGMENT_COUNT_TOLERANCE:
        logger.debug("slic_count_off_target", got=segment_map.n_segments, target=n_segments_target)
        return grid_segments(height, width, n_segments_target)
    return segment_map


# ---------------------------------------------------------------------------
# LIME
# ---------------------------------------------------------------------------

def as_scorer(model: Union[Classifier, Scorer], batch_size: int = 32) -> Scorer:
    """Uniform ``batch -> probabilities`` callable for classifiers and plain functions."""
    if isinstance(model, Classifier):
        return lambda batch: predict_proba(model, batch, batch_size=batch_size)
    if callable(model):
        return lambda batch: np.asarray(model(batch), dtype=np.float64).reshape(-1)
    raise InputError("model must be a Classifier or a callable scorer")


def sample_masks(n_samples: int, n_segments: int, seed: int) -> np.ndarray:
    """Bernoulli(0.5) keep/drop draws, one row per perturbed sample."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n_samples, n_segments)).astype(np.int8)


def baseline_image(image: ImageTensor, segment_map: SegmentMap, baseline: Union[Baseline, str]) -> np.ndarray:
    """Replacement pixels for segments switched off."""
    if Baseline(baseline) is Baseline.GRAY:
        low, high = image.value_range
        return np.full(image.shape, (low + high) / 2.0, dtype=np.float64)

    flat_labels = segment_map.labels.ravel()
    pixels = image.data.reshape(-1, 3)
    sums = np.zeros((segment_map.n_segments, 3))
    np.add.at(sums, flat_labels, pixels)
    means = sums / np.bincount(flat_labels, minlength=segment_map.n_segments)[:, None]
    return means[segment_map.labels]


def perturb(image: ImageTensor, segment_map: SegmentMap, masks: np.ndarray, fill: np.ndarray) -> np.ndarray:
    keep = masks.astype(bool)[:, segment_map.labels]
    return np.where(keep[..., None], image.data[None], fill[None])


def kernel_weights(masks: np.ndarray, kernel_width: float) -> np.ndarray:
    """exp(-d^2 / width^2) with d the cosine distance to the unperturbed mask."""
    reference = np.ones((1, masks.shape[1]))
    distances = pairwise_distances(masks.astype(np.float64), reference, metric='cosine').ravel()
    return np.exp(-(distances ** 2) / kernel_width ** 2)


def lime_explain(
    model: Union[Classifier, Scorer],
    image: ImageTensor,
    config: LimeConfig,
    segment_map: Optional[SegmentMap] = None,
    masks: Optional[np.ndarray] = None,
) -> Explanation:
    """Fit a weighted ridge surrogate of the model's score over superpixel on/off masks."""
    scorer = as_scorer(model, config.batch_size)
    if segment_map is None:
        segment_map = segment_superpixels(image, config.n_segments_target, config.segmentation, config.compactness)
    if segment_map.shape != image.shape[:2]:
        raise InputError("segment map and image sizes differ")

    k = segment_map.n_segments
    if k < 2:
        raise InputError("LIME needs at least two superpixels")
    if config.n_samples < k + 1:
        raise ConfigurationError(f"n_samples={config.n_samples} must be at least K+1={k + 1}", path='lime.n_samples')
    if config.top_k > k:
        raise ConfigurationError(f"top_k={config.top_k} exceeds the {k} superpixels", path='lime.top_k')

    if masks is None:
        masks = sample_masks(config.n_samples, k, config.seed)
    if masks.shape != (config.n_samples, k):
        raise InputError(f"masks must have shape ({config.n_samples}, {k})")

    fill = baseline_image(image, segment_map, config.baseline)
    scores = np.empty(len(masks), dtype=np.float64)
    for start in range(0, len(masks), config.batch_size):
        chunk = masks[start:start + config.batch_size]
        scores[start:start + len(chunk)] = scorer(perturb(image, segment_map, chunk, fill))

    sample_weight = kernel_weights(masks, config.kernel_width)
    surrogate = Ridge(alpha=config.ridge_alpha, fit_intercept=True)
    surrogate.fit(masks.astype(np.float64), scores, sample_weight=sample_weight)
    weights = np.asarray(surrogate.coef_, dtype=np.float64)

    # descending weight, ties to the lower id
    ranking = np.lexsort((np.arange(k), -weights))
    top = tuple(int(i) for i in ranking[:config.top_k])
    predicted = float(scorer(image.data[None])[0])

    logger.info("lime_explained", n_segments=k, n_samples=len(masks), top_segments=list(top), predicted_prob=predicted)
    return Explanation(
        segment_map=segment_map,
        weights=weights,
        intercept=float(surrogate.intercept_),
        top_segments=top,
        top_mask=segment_map.mask_of(top),
        predicted_prob=predicted,
    )


# ---------------------------------------------------------------------------
# Saliency
# ---------------------------------------------------------------------------

def input_gradient(model: nn.Module, image: ImageTensor) -> np.ndarray:
    """d(logit)/d(pixel) for one image, H x W x 3, in the model's dtype."""
    if not isinstance(model, nn.Module) or not hasattr(model, 'logits'):
        raise UnsupportedOperationError("saliency needs a differentiable model exposing logits")

    param = next(model.parameters(), None)
    dtype = param.dtype if param is not None else torch.float64
    was_training = model.training
    model.eval()
    try:
        x = torch.tensor(image.data[None], dtype=dtype, requires_grad=True)
        logit = model.logits(x).reshape(-1)[0]
        if not logit.requires_grad:
            return np.zeros(image.shape, dtype=np.float64)
        (grad,) = torch.autograd.grad(logit, x, allow_unused=True)
    finally:
        model.train(was_training)
    if grad is None:
        return np.zeros(image.shape, dtype=np.float64)
    return grad[0].detach().double().numpy()


def saliency_map(model: nn.Module, image: ImageTensor) -> SaliencyMap:
    """|d logit / d pixel| reduced over channels by max, scaled to [0, 1]."""
    raw = np.abs(input_gradient(model, image)).max(axis=-1)
    peak = raw.max()
    values = raw / peak if peak > 0 else np.zeros_like(raw)

    with torch.no_grad():
        param = next(model.parameters(), None)
        dtype = param.dtype if param is not None else torch.float64
        logit = model.logits(torch.as_tensor(image.data[None], dtype=dtype)).reshape(-1)[0]
        prob = float(torch.sigmoid(logit.double()))
    logger.info("saliency_computed", peak_gradient=float(peak), predicted_prob=prob)
    return SaliencyMap(values=values, predicted_prob=prob)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def overlay_pixels(image: ImageTensor, result: Union[Explanation, SaliencyMap]) -> np.ndarray:
    """The right-hand panel: highlighted LIME regions or a saliency heatmap blend."""
    original = image.to_uint8()
    if isinstance(result, Explanation):
        marked = mark_boundaries(original, result.top_mask.astype(np.int64), color=HIGHLIGHT_COLOR, mode='inner')
        return np.clip(np.rint(marked * 255.0), 0, 255).astype(np.uint8)

    values = np.asarray(result.values, dtype=np.float64)
    if values.shape != image.shape[:2]:
        raise InputError("saliency map and image sizes differ")
    heat = colormaps['jet'](values)[..., :3] * 255.0
    alpha = SALIENCY_ALPHA * values[..., None]
    blended = (1.0 - alpha) * original + alpha * heat
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def render_explanation_overlay(
    image: ImageTensor,
    result: Union[Explanation, SaliencyMap],
    out_path: Path,
    caption: Optional[str] = None,
) -> Path:
    """Side-by-side PNG: original | overlay, with a prediction caption below."""
    if isinstance(result, Explanation) and result.segment_map.shape != image.shape[:2]:
        raise InputError("explanation and image sizes differ")

    height, width, _ = image.shape
    canvas = Image.new('RGB', (2 * width, height + CAPTION_HEIGHT), color=(0, 0, 0))
    canvas.paste(Image.fromarray(image.to_uint8()), (0, 0))
    canvas.paste(Image.fromarray(overlay_pixels(image, result)), (width, 0))

    if caption is None and result.predicted_prob is not None:
        caption = f"P(Unhealthy) = {result.predicted_prob:.3f}"
    if caption:
        draw = ImageDraw.Draw(canvas)
        draw.text((4, height + 3), caption, fill=(255, 255, 255), font=ImageFont.load_default())

    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        canvas.save(out_path, format='PNG')
    except OSError as exc:
        raise OutputError(out_path, exc) from exc
    logger.debug("overlay_rendered", path=str(out_path))
    return out_path
