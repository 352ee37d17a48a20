"""
Domain models shared by the pipeline services.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.services.error_handler import ContractError, InputError

SUPPORTED_EXTENSIONS = frozenset({'.png', '.jpg', '.jpeg', '.bmp'})


class ClassLabel(str, Enum):
    """The two frame classes; Unhealthy is the positive class."""

    HEALTHY = 'Healthy'
    UNHEALTHY = 'Unhealthy'

    @classmethod
    def parse(cls, value: Any) -> 'ClassLabel':
        if isinstance(value, ClassLabel):
            return value
        text = str(value).strip().lower()
        for label in cls:
            if label.value.lower() == text:
                return label
        raise InputError(f"unknown class label {value!r}", {"label": str(value)})

    @property
    def code(self) -> int:
        return 1 if self is ClassLabel.UNHEALTHY else 0


class SplitTag(str, Enum):
    TRAIN = 'train'
    VAL = 'val'
    TEST = 'test'

    @classmethod
    def parse(cls, value: Any) -> 'SplitTag':
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InputError(f"unknown split {value!r}", {"split": str(value)}) from None


@dataclass(frozen=True)
class ImageRecord:
    """One labeled image on disk."""

    path: Path
    label: ClassLabel
    split: Optional[SplitTag] = None

    def with_split(self, split: Optional[SplitTag]) -> 'ImageRecord':
        return ImageRecord(self.path, self.label, split)


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered inventory of labeled images with per-class counts."""

    records: Tuple[ImageRecord, ...]
    counts: Mapping[ClassLabel, int] = field(default_factory=dict)

    def __post_init__(self):
        ordered = tuple(sorted(self.records, key=lambda r: str(r.path)))
        object.__setattr__(self, 'records', ordered)
        tallied = {label: 0 for label in ClassLabel}
        for record in ordered:
            tallied[record.label] += 1
        if self.counts and dict(self.counts) != tallied:
            raise ContractError("manifest counts disagree with its records", {"counts": str(dict(self.counts))})
        object.__setattr__(self, 'counts', tallied)

    @classmethod
    def from_records(cls, records: Iterable[ImageRecord]) -> 'DatasetManifest':
        return cls(tuple(records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def paths(self) -> List[Path]:
        return [r.path for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        """Encoded labels (0 Healthy, 1 Unhealthy) in record order."""
        return np.array([r.label.code for r in self.records], dtype=np.int64)

    def by_label(self, label: ClassLabel) -> List[ImageRecord]:
        return [r for r in self.records if r.label is label]

    def subset(self, split: SplitTag) -> 'DatasetManifest':
        return DatasetManifest.from_records(r for r in self.records if r.split is split)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                'path': [str(r.path) for r in self.records],
                'label': [r.label.value for r in self.records],
                'split': [r.split.value if r.split else '' for r in self.records],
            },
            columns=['path', 'label', 'split'],
        )

    def to_csv(self, out_path: Path) -> Path:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(out_path, index=False, lineterminator='\n')
        return out_path

    @classmethod
    def from_csv(cls, path: Path) -> 'DatasetManifest':
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        if list(frame.columns) != ['path', 'label', 'split']:
            raise InputError(f"{path}: expected header path,label,split")
        records = [
            ImageRecord(Path(row.path), ClassLabel.parse(row.label), SplitTag.parse(row.split) if row.split else None)
            for row in frame.itertuples(index=False)
        ]
        return cls.from_records(records)


@dataclass(frozen=True, eq=False)
class IntensityHistogram:
    """Grayscale value counts (0..255) over one class."""

    bins: np.ndarray
    class_label: ClassLabel
    n_images: int
    unreadable: Tuple[Path, ...] = ()

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.int64)
        if bins.shape != (256,) or (bins < 0).any():
            raise ContractError("histogram needs 256 nonnegative bins")
        object.__setattr__(self, 'bins', bins)
        object.__setattr__(self, 'unreadable', tuple(Path(p) for p in self.unreadable))

    @property
    def n_pixels(self) -> int:
        return int(self.bins.sum())

    def to_csv(self, out_path: Path) -> Path:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({'value': np.arange(256), 'count': self.bins})
        frame.to_csv(out_path, index=False, lineterminator='\n')
        return out_path


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """H x W x 3 real array with a declared value interval."""

    data: np.ndarray
    value_range: Tuple[float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ContractError(f"image tensor must be H x W x 3, got {data.shape}")
        low, high = self.value_range
        if data.size and (data.min() < low or data.max() > high):
            raise ContractError(
                f"image values [{data.min()}, {data.max()}] leave declared range [{low}, {high}]"
            )
        object.__setattr__(self, 'data', data)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_uint8(self) -> np.ndarray:
        """Rescale to displayable 0..255 pixels."""
        low, high = self.value_range
        scaled = (self.data - low) / (high - low) * 255.0
        return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


@dataclass
class TrainingHistory:
    """Per-epoch loss and accuracy series."""

    train_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)

    COLUMNS = ('epoch', 'train_loss', 'train_accuracy', 'val_loss', 'val_accuracy')

    def __len__(self) -> int:
        return len(self.train_loss)

    def record(self, train_loss: float, train_accuracy: float, val_loss: float, val_accuracy: float) -> None:
        if min(train_loss, val_loss) < 0:
            raise ContractError("losses must be nonnegative")
        if not (0.0 <= train_accuracy <= 1.0 and 0.0 <= val_accuracy <= 1.0):
            raise ContractError("accuracies must lie in [0, 1]")
        self.train_loss.append(float(train_loss))
        self.train_accuracy.append(float(train_accuracy))
        self.val_loss.append(float(val_loss))
        self.val_accuracy.append(float(val_accuracy))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                'epoch': np.arange(1, len(self) + 1),
                'train_loss': self.train_loss,
                'train_accuracy': self.train_accuracy,
                'val_loss': self.val_loss,
                'val_accuracy': self.val_accuracy,
            },
            columns=list(self.COLUMNS),
        )

    def to_csv(self, out_path: Path) -> Path:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(out_path, index=False, lineterminator='\n')
        return out_path

    @classmethod
    def from_csv(cls, path: Path) -> 'TrainingHistory':
        frame = pd.read_csv(path)
        if tuple(frame.columns) != cls.COLUMNS:
            raise InputError(f"{path}: expected header {','.join(cls.COLUMNS)}")
        return cls(
            train_loss=frame['train_loss'].astype(float).tolist(),
            train_accuracy=frame['train_accuracy'].astype(float).tolist(),
            val_loss=frame['val_loss'].astype(float).tolist(),
            val_accuracy=frame['val_accuracy'].astype(float).tolist(),
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts at a decision threshold; positive class is Unhealthy (1)."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ContractError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    def to_dict(self) -> Dict[str, int]:
        return {'tp': self.tp, 'fp': self.fp, 'fn': self.fn, 'tn': self.tn}


@dataclass(frozen=True)
class MetricsReport:
    """Threshold metrics plus ROC-AUC for one evaluated dataset.

    Reports imported from published summaries carry no confusion matrix
    and may lack an AUC.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    threshold: Optional[float]
    n_samples: int
    confusion: Optional[ConfusionMatrix] = None
    degenerate: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ('accuracy', 'precision', 'recall', 'f1'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name}={value!r} outside [0, 1]")
        if self.auc is not None and not 0.0 <= self.auc <= 1.0:
            raise ContractError(f"auc={self.auc!r} outside [0, 1]")
        if self.confusion is not None and self.confusion.total != self.n_samples:
            raise ContractError("confusion total disagrees with n_samples")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'auc': self.auc,
            'threshold': self.threshold,
            'n': self.n_samples,
            'confusion': self.confusion.to_dict() if self.confusion else None,
            'degenerate': list(self.degenerate),
        }

    def display(self) -> Dict[str, str]:
        """Values rounded to 4 dp for tables and console output."""
        data = {}
        for key in ('accuracy', 'precision', 'recall', 'f1', 'auc'):
            value = getattr(self, key)
            data[key] = '-' if value is None else f"{value:.4f}"
        return data


@dataclass(frozen=True, eq=False)
class SegmentMap:
    """Superpixel id per pixel, ids dense in [0, K)."""

    labels: np.ndarray
    n_segments: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ContractError("segment labels must be a 2-D array")
        present = np.unique(labels)
        if len(present) != self.n_segments or present[0] != 0 or present[-1] != self.n_segments - 1:
            raise ContractError("segment ids must be dense in [0, K)")
        object.__setattr__(self, 'labels', labels)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.labels.shape)  # type: ignore[return-value]

    def mask_of(self, segment_ids: Sequence[int]) -> np.ndarray:
        return np.isin(self.labels, np.asarray(list(segment_ids), dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Explanation:
    """Local linear surrogate over superpixels for one prediction."""

    segment_map: SegmentMap
    weights: np.ndarray
    intercept: float
    top_segments: Tuple[int, ...]
    top_mask: np.ndarray
    predicted_prob: float
    highlight: str = 'top_k_by_signed_weight'

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_segments': self.segment_map.n_segments,
            'weights': [float(w) for w in self.weights],
            'intercept': float(self.intercept),
            'top_k_ids': [int(i) for i in self.top_segments],
            'predicted_prob': float(self.predicted_prob),
            'highlight': self.highlight,
        }


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Normalized gradient magnitude per pixel, values in [0, 1]."""

    values: np.ndarray
    predicted_prob: Optional[float] = None

    def stats(self) -> Dict[str, float]:
        return {
            'min': float(self.values.min()),
            'max': float(self.values.max()),
            'mean': float(self.values.mean()),
            'nonzero_fraction': float((self.values > 0).mean()),
        }


@dataclass(frozen=True)
class ComparisonRow:
    """One line of the model comparison table."""

    model_name: str
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model': self.model_name,
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
        }


# Published reference timings; recorded alongside measurements, never asserted.
REFERENCE_TIMINGS: Dict[str, Any] = {
    'train_hours_for_50_epochs': 3.0,
    'pipeline_seconds_per_image': 30.0,
    'hardware': 'Nvidia GTX 1650',
}


@dataclass(frozen=True)
class TimingReport:
    """Measured wall-clock costs of training and inference."""

    train_seconds_per_epoch: float
    inference_seconds_per_image: float
    hardware_note: str
    repetitions: int
    n_images: int
    explanation_seconds_per_image: Optional[float] = None

    def __post_init__(self):
        if self.train_seconds_per_epoch <= 0 or self.inference_seconds_per_image <= 0:
            raise ContractError("timings must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'train_seconds_per_epoch': self.train_seconds_per_epoch,
            'inference_seconds_per_image': self.inference_seconds_per_image,
            'explanation_seconds_per_image': self.explanation_seconds_per_image,
            'hardware_note': self.hardware_note,
            'repetitions': self.repetitions,
            'n_images': self.n_images,
            'reference': dict(REFERENCE_TIMINGS),
        }
