"""
Utility decorators for the command-line surface.

Each decorator attaches one of the flags shared by several commands so
their spelling, type and help text stay identical everywhere.
"""
from pathlib import Path
from typing import Any, Callable, TypeVar

import click

from src.config import BackboneName, WeightsSource

F = TypeVar('F', bound=Callable[..., Any])

_existing_file = click.Path(exists=False, dir_okay=False, path_type=Path)
_directory = click.Path(file_okay=False, path_type=Path)


def config_option(f: F) -> F:
    return click.option(
        '--config', 'config_path', type=_existing_file, default=None,
        help='JSON run configuration; flags override its values.',
    )(f)


def data_dir_option(f: F) -> F:
    return click.option(
        '--data-dir', type=_directory, default=None,
        help='Dataset root holding one sub-directory per class.',
    )(f)


def out_dir_option(f: F) -> F:
    return click.option(
        '--out-dir', type=_directory, default=None,
        help='Directory receiving every artifact of the command.',
    )(f)


def seed_option(f: F) -> F:
    return click.option(
        '--seed', type=click.IntRange(min=0), default=None,
        help='Seed for splitting, training and explanation sampling.',
    )(f)


def checkpoint_option(f: F) -> F:
    return click.option(
        '--checkpoint', type=_directory, default=None,
        help='Checkpoint directory written by the train command.',
    )(f)


def threshold_option(f: F) -> F:
    return click.option(
        '--threshold', type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.5,
        show_default=True, help='Probability at or above which a frame is called Unhealthy.',
    )(f)


def model_options(f: F) -> F:
    """--backbone, --weights, --epochs and --batch-size."""
    f = click.option(
        '--batch-size', type=click.IntRange(min=1), default=None, help='Mini-batch size.',
    )(f)
    f = click.option(
        '--epochs', type=click.IntRange(min=1), default=None, help='Number of training epochs.',
    )(f)
    f = click.option(
        '--weights', type=click.Choice([w.value for w in WeightsSource]), default=None,
        help='Where backbone weights come from.',
    )(f)
    f = click.option(
        '--backbone', type=click.Choice([b.value for b in BackboneName]), default=None,
        help='Feature extractor to build.',
    )(f)
    return f
