"""
Seeded synthetic ultrasound-like frames for tests and demos.

Healthy frames are dark speckle backgrounds; unhealthy frames add bright
round blobs on top of the same kind of background, so mean brightness
separates the classes by construction.
"""
from pathlib import Path
from typing import Dict

import numpy as np
from PIL import Image

from src.models import ClassLabel
from src.services.error_handler import InputError, OutputError
from src.services.logging_service import get_logger

logger = get_logger(__name__)

CLASS_DIRECTORIES = {ClassLabel.HEALTHY: 'healthy', ClassLabel.UNHEALTHY: 'unhealthy'}


def synthetic_frame(rng: np.random.Generator, size: int, unhealthy: bool) -> np.ndarray:
    """One grayscale frame as uint8 ``size x size``."""
    frame = rng.normal(loc=35.0, scale=12.0, size=(size, size))
    # multiplicative speckle
    frame *= rng.gamma(shape=4.0, scale=0.25, size=(size, size))
    if unhealthy:
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(int(rng.integers(3, 6))):
            cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
            radius = rng.uniform(0.08 * size, 0.16 * size)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2))
            frame += rng.uniform(150.0, 210.0) * blob
    return np.clip(np.rint(frame), 0, 255).astype(np.uint8)


def make_synthetic_dataset(
    out_dir: Path,
    n_healthy: int = 16,
    n_unhealthy: int = 16,
    size: int = 64,
    seed: int = 0,
) -> Dict[ClassLabel, int]:
    """Write ``<out_dir>/{healthy,unhealthy}/*.png``; returns counts written."""
    if n_healthy < 0 or n_unhealthy < 0 or n_healthy + n_unhealthy == 0:
        raise InputError("synthetic dataset needs a positive number of images")
    if size < 8:
        raise InputError("synthetic image size must be at least 8 pixels")

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    counts = {ClassLabel.HEALTHY: n_healthy, ClassLabel.UNHEALTHY: n_unhealthy}

    for label, count in counts.items():
        class_dir = out_dir / CLASS_DIRECTORIES[label]
        try:
            class_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(class_dir, exc) from exc
        for index in range(count):
            frame = synthetic_frame(rng, size, unhealthy=label is ClassLabel.UNHEALTHY)
            Image.fromarray(frame).save(class_dir / f"{label.value.lower()}_{index:04d}.png")

    logger.info("synthetic_dataset_written", out_dir=str(out_dir), healthy=n_healthy, unhealthy=n_unhealthy, size=size)
    return counts
