"""
Reporting service: figures, comparison tables, prediction files and
timing benchmarks.
"""
import copy
import json
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from src.config import LimeConfig, PreprocessConfig, TrainConfig  # noqa: E402
from src.models import (  # noqa: E402
    ClassLabel,
    ComparisonRow,
    DatasetManifest,
    IntensityHistogram,
    MetricsReport,
    TimingReport,
    TrainingHistory,
)
from src.services.error_handler import InputError, OutputError  # noqa: E402
from src.services.evaluation_service import f1_from_pr, roc_auc, roc_curve  # noqa: E402
from src.services.logging_service import get_logger, log_performance  # noqa: E402
from src.services.model_service import Classifier, predict_proba  # noqa: E402
from src.services.preprocess_service import load_images, load_manifest_arrays, preprocess_image  # noqa: E402

logger = get_logger(__name__)

DPI = 100
CLASS_COLORS = {ClassLabel.HEALTHY: '#4C72B0', ClassLabel.UNHEALTHY: '#DD8452'}
PLOT_STYLE = {
    'font.family': 'DejaVu Sans',
    'font.size': 10,
    'axes.grid': True,
    'grid.alpha': 0.3,
    'svg.hashsalt': 'us-classifier',
}


def save_figure(fig: Figure, out_path: Path) -> Path:
    """Write ``fig`` as a byte-deterministic PNG and close it."""
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format='png', dpi=DPI, metadata={'Software': None})
    except OSError as exc:
        raise OutputError(out_path, exc) from exc
    finally:
        plt.close(fig)
    logger.debug("figure_written", path=str(out_path))
    return out_path


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def class_distribution_figure(counts: Mapping[ClassLabel, int]) -> Figure:
    labels = list(ClassLabel)
    heights = [int(counts.get(label, 0)) for label in labels]
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        bars = ax.bar(
            [label.value for label in labels],
            heights,
            color=[CLASS_COLORS[label] for label in labels],
        )
        ax.bar_label(bars)
        ax.set_xlabel('Class')
        ax.set_ylabel('Number of images')
        ax.set_title('Images per class')
        fig.tight_layout()
    return fig


def render_class_distribution(counts: Mapping[ClassLabel, int], out_path: Path) -> Path:
    """Bar chart of images per class."""
    return save_figure(class_distribution_figure(counts), out_path)


def intensity_histogram_figure(hist_healthy: IntensityHistogram, hist_unhealthy: IntensityHistogram) -> Figure:
    for hist in (hist_healthy, hist_unhealthy):
        if hist.n_pixels == 0:
            raise InputError(f"{hist.class_label.value} histogram is empty")
    with plt.rc_context(PLOT_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=False)
        for ax, hist in zip(axes, (hist_healthy, hist_unhealthy)):
            ax.bar(np.arange(256), hist.bins, width=1.0, color=CLASS_COLORS[hist.class_label])
            ax.set_xlim(0, 255)
            ax.set_xlabel('Pixel intensity')
            ax.set_ylabel('Frequency')
            ax.set_title(f"{hist.class_label.value} ({hist.n_images} images)")
        fig.tight_layout()
    return fig


def render_intensity_histograms(
    hist_healthy: IntensityHistogram, hist_unhealthy: IntensityHistogram, out_path: Path
) -> Path:
    """Two-panel pixel-intensity histogram figure."""
    return save_figure(intensity_histogram_figure(hist_healthy, hist_unhealthy), out_path)


def training_curves_figure(history: TrainingHistory) -> Figure:
    if len(history) == 0:
        raise InputError("training history is empty")
    epochs = np.arange(1, len(history) + 1)
    with plt.rc_context(PLOT_STYLE):
        fig, (loss_ax, acc_ax) = plt.subplots(1, 2, figsize=(10, 4))
        loss_ax.plot(epochs, history.train_loss, marker='o', label='train')
        loss_ax.plot(epochs, history.val_loss, marker='o', label='validation')
        loss_ax.set_title('Loss')
        loss_ax.set_ylabel('Binary cross-entropy')
        acc_ax.plot(epochs, history.train_accuracy, marker='o', label='train')
        acc_ax.plot(epochs, history.val_accuracy, marker='o', label='validation')
        acc_ax.set_title('Accuracy')
        acc_ax.set_ylabel('Binary accuracy')
        acc_ax.set_ylim(-0.02, 1.02)
        for ax in (loss_ax, acc_ax):
            ax.set_xlabel('Epoch')
            ax.set_xticks(epochs if len(epochs) <= 20 else epochs[::max(1, len(epochs) // 10)])
            ax.legend()
        fig.tight_layout()
    return fig


def render_training_curves(history: TrainingHistory, out_path: Path) -> Path:
    """Loss and accuracy per epoch, train vs validation."""
    return save_figure(training_curves_figure(history), out_path)


def render_roc_curve(y_true: Sequence[int], scores: Sequence[float], out_path: Path) -> Path:
    """ROC curve with its AUC in the legend."""
    fpr, tpr, _ = roc_curve(y_true, scores)
    auc = roc_auc(y_true, scores)
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(fpr, tpr, drawstyle='default', label=f"AUC = {auc:.4f}")
        ax.plot([0, 1], [0, 1], linestyle='--', color='grey', linewidth=1)
        ax.set_xlabel('False positive rate')
        ax.set_ylabel('True positive rate')
        ax.set_title('ROC curve (positive class: Unhealthy)')
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.legend(loc='lower right')
        fig.tight_layout()
    return save_figure(fig, out_path)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def comparison_table(
    reports: Sequence[Tuple[str, MetricsReport]],
    out_dir: Optional[Path] = None,
    stem: str = 'comparison',
) -> List[ComparisonRow]:
    """Rows sorted by F1 (descending); optionally written as CSV and aligned text."""
    if not reports:
        raise InputError("comparison needs at least one report")
    names = [name for name, _ in reports]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise InputError(f"duplicate model names: {', '.join(duplicates)}")

    rows = [
        ComparisonRow(
            model_name=name,
            accuracy=report.accuracy,
            precision=report.precision,
            recall=report.recall,
            f1=f1_from_pr(report.precision, report.recall),
        )
        for name, report in reports
    ]
    rows.sort(key=lambda row: (-row.f1, -row.accuracy, row.model_name))

    if out_dir is not None:
        write_comparison(rows, Path(out_dir), stem)
    return rows


def write_comparison(rows: Iterable[ComparisonRow], out_dir: Path, stem: str = 'comparison') -> Tuple[Path, Path]:
    frame = pd.DataFrame([row.to_dict() for row in rows], columns=['model', 'accuracy', 'precision', 'recall', 'f1'])
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        frame.to_csv(csv_path, index=False, lineterminator='\n')
        txt_path.write_text(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}") + '\n', encoding='utf-8')
    except OSError as exc:
        raise OutputError(out_dir, exc) from exc
    return csv_path, txt_path


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------

PREDICTION_COLUMNS = ['path', 'probability', 'predicted_label', 'error']


def write_predictions(
    model: Classifier,
    paths: Sequence[Path],
    threshold: float,
    out_path: Path,
    preprocess: Optional[PreprocessConfig] = None,
    num_workers: int = 1,
    batch_size: int = 32,
) -> pd.DataFrame:
    """CSV ``path,probability,predicted_label,error`` with one row per input, in input order.

    Rows for undecodable files keep an empty probability and label and
    carry the decode error; those files are also listed in
    ``<out_path>.errors.csv``.
    """
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must lie in (0, 1), got {threshold!r}")
    preprocess = preprocess or model.preprocess
    paths = [Path(p) for p in paths]
    images, loaded, errors = load_images(paths, preprocess, num_workers=num_workers, skip_unreadable=True)
    scores = predict_proba(model, images, batch_size=batch_size) if len(loaded) else np.zeros(0)

    failed = {str(e.path): e.details.get('original_error', e.message) for e in errors}
    ok = np.array([str(p) not in failed for p in paths], dtype=bool)
    probability = np.full(len(paths), np.nan)
    probability[ok] = scores
    predicted = pd.array([pd.NA] * len(paths), dtype='Int64')
    predicted[ok] = (scores >= threshold).astype(np.int64)

    frame = pd.DataFrame(
        {
            'path': [str(p) for p in paths],
            'probability': probability,
            'predicted_label': predicted,
            'error': [failed.get(str(p), '') for p in paths],
        },
        columns=PREDICTION_COLUMNS,
    )
    out_path = Path(out_path)
    errors_path = out_path.with_name(out_path.name + '.errors.csv')
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out_path, index=False, lineterminator='\n')
        if errors:
            pd.DataFrame(
                {'path': [str(e.path) for e in errors], 'error': [e.details.get('original_error', e.message) for e in errors]}
            ).to_csv(errors_path, index=False, lineterminator='\n')
        elif errors_path.exists():
            errors_path.unlink()
    except OSError as exc:
        raise OutputError(out_path, exc) from exc

    logger.info("predictions_written", path=str(out_path), n=len(frame), errors=len(errors))
    return frame


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def _median_seconds(samples: List[float]) -> float:
    return float(np.median(samples))


def benchmark(
    model: Classifier,
    dataset_sample: DatasetManifest,
    train_config: Optional[TrainConfig] = None,
    repetitions: int = 3,
    hardware_note: str = '',
    lime_config: Optional[LimeConfig] = None,
) -> TimingReport:
    """Median wall-clock timings of one training epoch and per-image inference."""
    from src.services.interpretability_service import lime_explain
    from src.services.training_service import train

    if len(dataset_sample) == 0:
        raise InputError("benchmark sample is empty")
    if repetitions < 3:
        raise InputError("benchmark needs at least 3 repetitions")

    preprocess = model.preprocess
    paths = dataset_sample.paths
    train_config = (train_config or TrainConfig()).model_copy(update={'epochs': 1})

    inference: List[float] = []
    for _ in range(repetitions):
        started = time.perf_counter()
        for path in paths:
            predict_proba(model, preprocess_image(path, preprocess))
        inference.append((time.perf_counter() - started) / len(paths))

    dataset = load_manifest_arrays(dataset_sample, preprocess)
    epochs: List[float] = []
    for _ in range(repetitions):
        scratch = copy.deepcopy(model)
        started = time.perf_counter()
        train(scratch, dataset, dataset, train_config)
        epochs.append(time.perf_counter() - started)

    explanation: Optional[float] = None
    if lime_config is not None:
        image = preprocess_image(paths[0], preprocess)
        samples = []
        for _ in range(repetitions):
            started = time.perf_counter()
            lime_explain(model, image, lime_config)
            samples.append(time.perf_counter() - started)
        explanation = _median_seconds(samples)

    report = TimingReport(
        train_seconds_per_epoch=_median_seconds(epochs),
        inference_seconds_per_image=_median_seconds(inference),
        hardware_note=hardware_note,
        repetitions=repetitions,
        n_images=len(paths),
        explanation_seconds_per_image=explanation,
    )
    log_performance(logger, 'inference per image', report.inference_seconds_per_image, {"n_images": len(paths)})
    log_performance(logger, 'training epoch', report.train_seconds_per_epoch, {"n_images": len(paths)})
    return report


def write_json(data: Dict[str, Any], out_path: Path) -> Path:
    """Pretty JSON with a trailing newline."""
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(data, indent=2) + '\n', encoding='utf-8')
    except OSError as exc:
        raise OutputError(out_path, exc) from exc
    return out_path
