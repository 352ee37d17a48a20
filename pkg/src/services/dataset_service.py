"""
Dataset service: discovery, class statistics, stratified splits and
pixel-intensity histograms.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.config import SplitSpec
from src.models import SUPPORTED_EXTENSIONS, ClassLabel, DatasetManifest, ImageRecord, IntensityHistogram, SplitTag
from src.services.error_handler import (
    EmptyDatasetError,
    ImageDecodeError,
    InputError,
    NotFoundError,
)
from src.services.logging_service import get_logger

logger = get_logger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

CLASS_DIR_PREFIXES: Tuple[Tuple[str, ClassLabel], ...] = (
    ('unhealth', ClassLabel.UNHEALTHY),
    ('health', ClassLabel.HEALTHY),
)


def class_for_directory(name: str) -> Optional[ClassLabel]:
    """Map a class directory name to its label, case-insensitively."""
    lowered = name.lower()
    for prefix, label in CLASS_DIR_PREFIXES:
        if lowered.startswith(prefix):
            return label
    return None


def is_supported_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in SUPPORTED_EXTENSIONS


def list_images(root: Path) -> List[Path]:
    """All supported images below ``root`` (any depth), sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise NotFoundError('Image directory', f"image directory not found: {root}")
    images = sorted((p for p in root.rglob('*') if is_supported_image(p)), key=str)
    if not images:
        raise EmptyDatasetError(f"no images found under {root}")
    return images


def scan_dataset(root: Path) -> DatasetManifest:
    """Build a manifest from ``<root>/<class>/<images>``."""
    root = Path(root)
    if not root.is_dir():
        raise NotFoundError('Dataset root', f"dataset root not found: {root}")

    records: List[ImageRecord] = []
    for class_dir in sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name):
        label = class_for_directory(class_dir.name)
        if label is None:
            logger.warning("unknown_class_directory_skipped", directory=str(class_dir))
            continue
        for path in sorted(class_dir.rglob('*'), key=str):
            if is_supported_image(path):
                records.append(ImageRecord(path.resolve(), label))

    if not records:
        raise EmptyDatasetError(f"no images found under {root}")

    manifest = DatasetManifest.from_records(records)
    logger.info(
        "dataset_scanned",
        root=str(root),
        n_records=len(manifest),
        healthy=manifest.counts[ClassLabel.HEALTHY],
        unhealthy=manifest.counts[ClassLabel.UNHEALTHY],
    )
    return manifest


def class_distribution(manifest: DatasetManifest) -> Dict[ClassLabel, int]:
    """Images per class, both classes always present."""
    return {label: int(manifest.counts.get(label, 0)) for label in ClassLabel}


def _split_sizes(n: int, fractions: Tuple[float, float, float]) -> Tuple[int, int, int]:
    # The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    manifest: DatasetManifest, spec: SplitSpec
) -> Tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Stratified train/val/test split.

    Within each class train receives floor(f_train * N_c), val receives
    floor(f_val * N_c) and test the remainder. The within-class shuffle
    depends only on ``spec.seed`` and the class.
    """
    if len(manifest) == 0:
        raise InputError("cannot split an empty manifest")
    if not isinstance(spec, SplitSpec):
        raise InputError("split spec must be a SplitSpec")

    parts: Dict[SplitTag, List[ImageRecord]] = {tag: [] for tag in SplitTag}
    tags = (SplitTag.TRAIN, SplitTag.VAL, SplitTag.TEST)

    for class_index, label in enumerate(ClassLabel):
        members = manifest.by_label(label)
        if not members:
            continue
        rng = np.random.default_rng([spec.seed, class_index])
        order = rng.permutation(len(members))
        sizes = _split_sizes(len(members), spec.fractions)

        start = 0
        for tag, size, fraction in zip(tags, sizes, spec.fractions):
            chosen = [members[i] for i in order[start:start + size]]
            start += size
            if size == 0 and fraction > 0 and len(members) >= 3:
                logger.warning("empty_split_for_class", split=tag.value, label=label.value, n_class=len(members))
            parts[tag].extend(record.with_split(tag) for record in chosen)

    train, val, test = (DatasetManifest.from_records(parts[tag]) for tag in tags)
    logger.info("dataset_split", train=len(train), val=len(val), test=len(test), seed=spec.seed)
    return train, val, test


def assign_splits(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """The input manifest with every record's split tag filled in."""
    train, val, test = split_dataset(manifest, spec)
    return DatasetManifest.from_records(list(train.records) + list(val.records) + list(test.records))


def _grayscale_tally(path: Path) -> Tuple[np.ndarray, int]:
    try:
        with Image.open(path) as image:
            rgb = np.asarray(image.convert('RGB'), dtype=np.float64)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(path, exc) from exc
    gray = np.rint(rgb @ LUMA_WEIGHTS)
    gray = np.clip(gray, 0, 255).astype(np.int64)
    return np.bincount(gray.ravel(), minlength=256), gray.size


def pixel_intensity_histogram(records: Sequence[ImageRecord], num_workers: int = 1) -> IntensityHistogram:
    """Grayscale value histogram over images of a single class.

    Files that fail to decode are skipped and listed in ``unreadable``.
    """
    if not records:
        raise InputError("histogram needs at least one record")
    labels = {r.label for r in records}
    if len(labels) != 1:
        raise InputError("all records of a histogram must share one class label")
    label = labels.pop()

    ordered = sorted(records, key=lambda r: str(r.path))

    def tally(record: ImageRecord):
        try:
            return _grayscale_tally(record.path)
        except ImageDecodeError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, num_workers)) as pool:
        results = list(pool.map(tally, ordered))

    bins = np.zeros(256, dtype=np.int64)
    errors: List[ImageDecodeError] = []
    n_images = 0
    for result in results:
        if isinstance(result, ImageDecodeError):
            errors.append(result)
            logger.warning("histogram_image_unreadable", path=str(result.path))
            continue
        counts, _ = result
        bins += counts
        n_images += 1

    if n_images == 0:
        raise InputError(
            "no readable images for histogram",
            {"errors": [str(e.path) for e in errors]},
        )
    return IntensityHistogram(
        bins=bins,
        class_label=label,
        n_images=n_images,
        unreadable=tuple(e.path for e in errors),
    )
