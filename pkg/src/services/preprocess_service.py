"""
Preprocessing service: decode, resize, normalize and label-encode images.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from src.config import Normalization, PreprocessConfig
from src.models import ClassLabel, DatasetManifest, ImageTensor
from src.services.error_handler import ContractError, ImageDecodeError, InputError
from src.services.logging_service import get_logger

logger = get_logger(__name__)

PIXEL_RANGE = (0.0, 255.0)


@dataclass(frozen=True, eq=False)
class ArrayDataset:
    """Preprocessed images (N x H x W x 3, float32) with encoded labels."""

    images: np.ndarray
    labels: np.ndarray
    paths: Tuple[Path, ...] = ()

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ContractError(f"dataset images must be N x H x W x 3, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ContractError("images and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)


def load_and_resize(path: Union[str, Path], config: PreprocessConfig) -> ImageTensor:
    """Decode a raster and bilinearly resize it to the target size (values 0..255)."""
    try:
        with Image.open(path) as image:
            rgb = np.asarray(image.convert('RGB'), dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(path, exc) from exc

    target = (config.target_height, config.target_width)
    if rgb.shape[:2] == target:
        resized = rgb.astype(np.float64)
    else:
        tensor = torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1)))[None]
        out = F.interpolate(tensor, size=target, mode='bilinear', align_corners=False, antialias=True)
        resized = out[0].permute(1, 2, 0).numpy().astype(np.float64)
    return ImageTensor(np.clip(resized, *PIXEL_RANGE), PIXEL_RANGE)


def normalize(image: ImageTensor, mode: Normalization = Normalization.INCEPTION_MINUS1_1) -> ImageTensor:
    """Affine map from 0..255 pixels into the backbone's input range."""
    data = np.asarray(image.data, dtype=np.float64)
    if data.size and (data.min() < PIXEL_RANGE[0] or data.max() > PIXEL_RANGE[1]):
        raise ContractError(f"normalize expects values in [0, 255], got [{data.min()}, {data.max()}]")

    mode = Normalization(mode)
    if mode is Normalization.INCEPTION_MINUS1_1:
        out = data / 127.5 - 1.0
    else:
        out = data / 255.0
    low, high = mode.value_range
    return ImageTensor(np.clip(out, low, high), mode.value_range)


def denormalize(image: ImageTensor, mode: Normalization = Normalization.INCEPTION_MINUS1_1) -> ImageTensor:
    """Inverse of ``normalize``."""
    mode = Normalization(mode)
    data = np.asarray(image.data, dtype=np.float64)
    if mode is Normalization.INCEPTION_MINUS1_1:
        out = (data + 1.0) * 127.5
    else:
        out = data * 255.0
    return ImageTensor(np.clip(out, *PIXEL_RANGE), PIXEL_RANGE)


def preprocess_image(path: Union[str, Path], config: PreprocessConfig) -> ImageTensor:
    """load_and_resize followed by normalize."""
    return normalize(load_and_resize(path, config), config.normalization)


def encode_label(label: Union[ClassLabel, str]) -> int:
    """Healthy -> 0, Unhealthy -> 1."""
    return ClassLabel.parse(label).code


def load_images(
    paths: Sequence[Path],
    config: PreprocessConfig,
    num_workers: int = 1,
    skip_unreadable: bool = False,
) -> Tuple[np.ndarray, List[Path], List[ImageDecodeError]]:
    """Preprocess many files; order of the output follows ``paths``.

    Returns the stacked float32 images, the paths that were decoded and
    the decode errors (only non-empty when ``skip_unreadable``).
    """
    def work(path: Path) -> Union[np.ndarray, ImageDecodeError]:
        try:
            return preprocess_image(path, config).data.astype(np.float32)
        except ImageDecodeError as exc:
            if not skip_unreadable:
                raise
            return exc

    with ThreadPoolExecutor(max_workers=max(1, num_workers)) as pool:
        results = list(pool.map(work, paths))

    arrays: List[np.ndarray] = []
    loaded: List[Path] = []
    errors: List[ImageDecodeError] = []
    for path, result in zip(paths, results):
        if isinstance(result, ImageDecodeError):
            logger.warning("image_skipped", path=str(path), reason=result.details.get("original_error"))
            errors.append(result)
        else:
            arrays.append(result)
            loaded.append(Path(path))

    shape = (0, config.target_height, config.target_width, 3)
    stacked = np.stack(arrays) if arrays else np.zeros(shape, dtype=np.float32)
    return stacked, loaded, errors


def load_manifest_arrays(
    manifest: DatasetManifest, config: PreprocessConfig, num_workers: int = 1
) -> ArrayDataset:
    """Preprocess every record of a labeled manifest."""
    if len(manifest) == 0:
        raise InputError("cannot load an empty manifest")
    images, loaded, _ = load_images(manifest.paths, config, num_workers=num_workers)
    logger.debug("manifest_loaded", n_images=len(loaded), shape=list(images.shape))
    return ArrayDataset(images=images, labels=manifest.labels, paths=tuple(loaded))


def as_batch(images: Union[ImageTensor, Sequence[ImageTensor], np.ndarray]) -> np.ndarray:
    """Normalize the accepted batch spellings to an N x H x W x 3 array."""
    if isinstance(images, ImageTensor):
        return images.data[None]
    if isinstance(images, np.ndarray):
        return images[None] if images.ndim == 3 else images
    return np.stack([image.data for image in images])
