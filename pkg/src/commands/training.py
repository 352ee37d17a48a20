"""
Model commands: train, evaluate and predict.
"""
from pathlib import Path
from typing import Optional

import click

from src.commands.common import (
    ALL_SPLITS,
    checkpoint_of,
    checkpoint_split_spec,
    data_dir_of,
    num_workers,
    out_dir_of,
    resolve_run_config,
    split_manifest,
    with_data_dir,
    write_effective_config,
)
from src.extensions import get_settings
from src.middleware import track_command
from src.models import SplitTag
from src.services.dataset_service import assign_splits, list_images, scan_dataset
from src.services.error_handler import NotFoundError, handle_command_errors
from src.services.evaluation_service import evaluate as evaluate_model
from src.services.logging_service import get_logger
from src.services.model_service import build_classifier
from src.services.preprocess_service import load_manifest_arrays
from src.services.reporting_service import render_roc_curve, render_training_curves, write_json, write_predictions
from src.services.training_service import load_checkpoint, read_sidecar, save_checkpoint, train as train_model
from src.utils.decorators import (
    checkpoint_option,
    config_option,
    data_dir_option,
    model_options,
    out_dir_option,
    seed_option,
    threshold_option,
)

logger = get_logger(__name__)

CHECKPOINT_DIR = 'checkpoint'
SPLIT_CHOICES = click.Choice([tag.value for tag in SplitTag] + [ALL_SPLITS])


@click.command('train')
@config_option
@data_dir_option
@out_dir_option
@seed_option
@model_options
@handle_command_errors
@track_command
def train(
    config_path: Optional[Path],
    data_dir: Optional[Path],
    out_dir: Optional[Path],
    seed: Optional[int],
    backbone: Optional[str],
    weights: Optional[str],
    epochs: Optional[int],
    batch_size: Optional[int],
) -> None:
    """Train a backbone + head classifier and write its checkpoint."""
    config = resolve_run_config(
        config_path, data_dir=data_dir, out_dir=out_dir, seed=seed,
        backbone=backbone, weights=weights, epochs=epochs, batch_size=batch_size,
    )
    root = data_dir_of(config)
    target = out_dir_of(config)
    write_effective_config(config, target)

    manifest = assign_splits(scan_dataset(root), config.split)
    manifest.to_csv(target / 'manifest.csv')
    workers = num_workers()
    train_set = load_manifest_arrays(manifest.subset(SplitTag.TRAIN), config.preprocess, workers)
    val_set = load_manifest_arrays(manifest.subset(SplitTag.VAL), config.preprocess, workers)

    model = build_classifier(
        config.backbone, config.head, config.preprocess, cache_dir=Path(get_settings().PIPELINE_CACHE_DIR)
    )
    model, history = train_model(model, train_set, val_set, config.train)

    save_checkpoint(model, history, target / CHECKPOINT_DIR, metadata={
        'data_dir': str(root),
        'split': config.split.model_dump(mode='json'),
        'train': config.train.model_dump(mode='json'),
    })
    history.to_csv(target / 'history.csv')
    render_training_curves(history, target / 'training_curves.png')
    click.echo(
        f"trained {config.backbone.name.value} for {len(history)} epochs: "
        f"train_accuracy={history.train_accuracy[-1]:.4f} val_accuracy={history.val_accuracy[-1]:.4f}"
    )


@click.command('evaluate')
@checkpoint_option
@config_option
@data_dir_option
@out_dir_option
@seed_option
@threshold_option
@click.option('--split', type=SPLIT_CHOICES, default=SplitTag.TEST.value, show_default=True,
              help='Which part of the dataset to score.')
@click.option('--name', type=str, default=None, help='Model name recorded in the metrics file.')
@handle_command_errors
@track_command
def evaluate(
    checkpoint: Optional[Path],
    config_path: Optional[Path],
    data_dir: Optional[Path],
    out_dir: Optional[Path],
    seed: Optional[int],
    threshold: float,
    split: str,
    name: Optional[str],
) -> None:
    """Score a dataset split with a checkpoint and write its metrics."""
    config = resolve_run_config(config_path, checkpoint=checkpoint, data_dir=data_dir, out_dir=out_dir, seed=seed)
    checkpoint = checkpoint_of(config)
    sidecar = read_sidecar(checkpoint)
    model, _ = load_checkpoint(checkpoint)

    recorded = sidecar.get('metadata', {}).get('data_dir')
    if not config.paths.data_dir:
        if not recorded:
            raise NotFoundError('Dataset root', "no dataset given (--data-dir) and none recorded in the checkpoint")
        config = with_data_dir(config, recorded)
    root = data_dir_of(config)
    target = out_dir_of(config, default=checkpoint.parent)
    write_effective_config(config, target, name='effective_config_evaluate.json')

    # the split always follows the checkpoint so its test images stay held out
    _, subset = split_manifest(root, checkpoint_split_spec(sidecar), split)
    dataset = load_manifest_arrays(subset, model.preprocess, num_workers())
    report, scores = evaluate_model(model, dataset, threshold=threshold)

    payload = {'model': name or model.backbone.spec.name.value, 'split': split, **report.to_dict()}
    write_json(payload, target / f"metrics_{split}.json")
    if report.auc is not None:
        render_roc_curve(dataset.labels, scores, target / f"roc_{split}.png")
    shown = report.display()
    click.echo(' '.join(f"{key}={value}" for key, value in shown.items()))


@click.command('predict')
@checkpoint_option
@config_option
@data_dir_option
@out_dir_option
@seed_option
@threshold_option
@click.option('--split', type=SPLIT_CHOICES, default=None,
              help='Score one split of a labeled dataset instead of every image below --data-dir.')
@handle_command_errors
@track_command
def predict(
    checkpoint: Optional[Path],
    config_path: Optional[Path],
    data_dir: Optional[Path],
    out_dir: Optional[Path],
    seed: Optional[int],
    threshold: float,
    split: Optional[str],
) -> None:
    """Write per-image Unhealthy probabilities for a directory of frames."""
    config = resolve_run_config(config_path, checkpoint=checkpoint, data_dir=data_dir, out_dir=out_dir, seed=seed)
    checkpoint = checkpoint_of(config)
    root = data_dir_of(config)
    model, _ = load_checkpoint(checkpoint)

    if split is None:
        paths = list_images(root)
    else:
        _, subset = split_manifest(root, checkpoint_split_spec(read_sidecar(checkpoint)), split)
        paths = subset.paths

    target = out_dir_of(config, default=checkpoint.parent)
    write_effective_config(config, target, name='effective_config_predict.json')
    frame = write_predictions(model, paths, threshold, target / 'predictions.csv', num_workers=num_workers())
    unreadable = int(frame['predicted_label'].isna().sum())
    click.echo(
        f"{len(frame)} predictions, {int(frame['predicted_label'].sum())} Unhealthy, "
        f"{unreadable} unreadable -> {target / 'predictions.csv'}"
    )
