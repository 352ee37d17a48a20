"""
Dataset commands: synthetic data generation and exploratory analysis.
"""
from pathlib import Path
from typing import Dict, Optional

import click
import numpy as np

from src.commands.common import data_dir_of, num_workers, out_dir_of, resolve_run_config, write_effective_config
from src.middleware import track_command
from src.models import ClassLabel, IntensityHistogram, SplitTag
from src.services.dataset_service import assign_splits, class_distribution, pixel_intensity_histogram, scan_dataset
from src.services.error_handler import handle_command_errors
from src.services.logging_service import get_logger
from src.services.reporting_service import render_class_distribution, render_intensity_histograms, write_json
from src.services.synthetic_service import make_synthetic_dataset
from src.utils.decorators import config_option, data_dir_option, out_dir_option, seed_option

logger = get_logger(__name__)


def _mean_intensity(hist: IntensityHistogram) -> float:
    return float(np.dot(np.arange(256), hist.bins) / hist.n_pixels)


@click.command('make-synthetic')
@click.option('--out-dir', type=click.Path(file_okay=False, path_type=Path), required=True,
              help='Dataset root to create.')
@click.option('--n-healthy', type=click.IntRange(min=0), default=16, show_default=True)
@click.option('--n-unhealthy', type=click.IntRange(min=0), default=16, show_default=True)
@click.option('--size', type=click.IntRange(min=8), default=64, show_default=True, help='Square image side in pixels.')
@seed_option
@handle_command_errors
@track_command
def make_synthetic(out_dir: Path, n_healthy: int, n_unhealthy: int, size: int, seed: Optional[int]) -> None:
    """Write a seeded two-class synthetic dataset of PNG frames."""
    counts = make_synthetic_dataset(out_dir, n_healthy, n_unhealthy, size, seed or 0)
    click.echo(f"wrote {sum(counts.values())} images to {out_dir}")


@click.command('analyze')
@config_option
@data_dir_option
@out_dir_option
@seed_option
@handle_command_errors
@track_command
def analyze(
    config_path: Optional[Path],
    data_dir: Optional[Path],
    out_dir: Optional[Path],
    seed: Optional[int],
) -> None:
    """Inventory a dataset: manifest, class distribution, intensity histograms."""
    config = resolve_run_config(config_path, data_dir=data_dir, out_dir=out_dir, seed=seed)
    root = data_dir_of(config)
    target = out_dir_of(config)
    write_effective_config(config, target)

    manifest = assign_splits(scan_dataset(root), config.split)
    manifest.to_csv(target / 'manifest.csv')
    counts = class_distribution(manifest)
    render_class_distribution(counts, target / 'class_distribution.png')

    histograms: Dict[ClassLabel, IntensityHistogram] = {}
    for label in ClassLabel:
        records = manifest.by_label(label)
        if not records:
            logger.warning("class_without_images", label=label.value)
            continue
        histograms[label] = pixel_intensity_histogram(records, num_workers=num_workers())
        histograms[label].to_csv(target / f"histogram_{label.value.lower()}.csv")
    if len(histograms) == len(ClassLabel):
        render_intensity_histograms(
            histograms[ClassLabel.HEALTHY],
            histograms[ClassLabel.UNHEALTHY],
            target / 'intensity_histograms.png',
        )

    stats = {
        'n_images': len(manifest),
        'counts': {label.value: counts[label] for label in ClassLabel},
        'splits': {tag.value: len(manifest.subset(tag)) for tag in SplitTag},
        'mean_intensity': {label.value: _mean_intensity(hist) for label, hist in histograms.items()},
        'unreadable': sorted(str(path) for hist in histograms.values() for path in hist.unreadable),
    }
    write_json(stats, target / 'stats.json')
    click.echo(
        f"{len(manifest)} images: "
        + ', '.join(f"{label.value}={counts[label]}" for label in ClassLabel)
        + f" -> {target}"
    )
