"""
Reporting commands: explanations, model comparison and timing benchmarks.
"""
import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import click

from src.commands.common import checkpoint_of, data_dir_of, out_dir_of, resolve_run_config, write_effective_config
from src.middleware import track_command
from src.models import ClassLabel, DatasetManifest, MetricsReport
from src.services.dataset_service import scan_dataset
from src.services.error_handler import ContractError, InputError, NotFoundError, handle_command_errors
from src.services.evaluation_service import f1_from_pr, report_from_summary
from src.services.interpretability_service import lime_explain, render_explanation_overlay, saliency_map
from src.services.logging_service import get_logger
from src.services.preprocess_service import preprocess_image
from src.services.reporting_service import benchmark as run_benchmark
from src.services.reporting_service import comparison_table, write_json
from src.services.training_service import load_checkpoint
from src.utils.decorators import checkpoint_option, config_option, data_dir_option, out_dir_option, seed_option

logger = get_logger(__name__)

EXPLAIN_METHODS = ('lime', 'saliency')


@click.command('explain')
@checkpoint_option
@config_option
@out_dir_option
@seed_option
@click.option('--image', 'image_path', type=click.Path(dir_okay=False, path_type=Path), required=True,
              help='Frame to explain.')
@click.option('--method', type=click.Choice(EXPLAIN_METHODS), default='lime', show_default=True)
@handle_command_errors
@track_command
def explain(
    checkpoint: Optional[Path],
    config_path: Optional[Path],
    out_dir: Optional[Path],
    seed: Optional[int],
    image_path: Path,
    method: str,
) -> None:
    """Explain one prediction with LIME superpixels or a gradient saliency map."""
    config = resolve_run_config(config_path, checkpoint=checkpoint, out_dir=out_dir, seed=seed)
    if not image_path.exists():
        raise NotFoundError('Image', f"image not found: {image_path}")
    model, _ = load_checkpoint(checkpoint_of(config))
    target = out_dir_of(config)
    write_effective_config(config, target)

    image = preprocess_image(image_path, model.preprocess)
    if method == 'lime':
        result = lime_explain(model, image, config.lime)
        payload = {'method': method, 'image': str(image_path), **result.to_dict()}
    else:
        result = saliency_map(model, image)
        payload = {
            'method': method,
            'image': str(image_path),
            'predicted_prob': result.predicted_prob,
            'stats': result.stats(),
        }

    write_json(payload, target / f"explanation_{method}.json")
    render_explanation_overlay(image, result, target / f"overlay_{method}.png")
    click.echo(f"P(Unhealthy)={result.predicted_prob:.4f} -> {target / f'overlay_{method}.png'}")


def _read_summary(path: Path) -> Tuple[str, MetricsReport]:
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise NotFoundError('Metrics file', f"metrics file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")

    missing = [key for key in ('accuracy', 'precision', 'recall') if not isinstance(data.get(key), (int, float))]
    if missing:
        raise InputError(f"{path}: missing or non-numeric {', '.join(missing)}")
    auc = data.get('auc')
    flags = data.get('degenerate') or []
    if not isinstance(flags, list) or not all(isinstance(flag, str) for flag in flags):
        raise InputError(f"{path}: degenerate must be a list of metric names")
    try:
        report = report_from_summary(
            float(data['accuracy']),
            float(data['precision']),
            float(data['recall']),
            float(auc) if isinstance(auc, (int, float)) else None,
            degenerate=flags,
        )
    except (InputError, ContractError) as exc:
        raise InputError(f"{path}: {exc.message}") from exc

    recorded_f1 = data.get('f1')
    if isinstance(recorded_f1, (int, float)) and abs(recorded_f1 - report.f1) > 1e-4:
        logger.warning("recorded_f1_disagrees", path=str(path), recorded=recorded_f1, recomputed=report.f1)
    return str(data.get('model') or path.stem), report


@click.command('compare')
@click.argument('metrics_files', nargs=-1, required=True, type=click.Path(dir_okay=False, path_type=Path))
@out_dir_option
@handle_command_errors
@track_command
def compare(metrics_files: Sequence[Path], out_dir: Optional[Path]) -> None:
    """Rank models by F1 from their metrics JSON files."""
    reports: List[Tuple[str, MetricsReport]] = [_read_summary(Path(p)) for p in metrics_files]
    target = Path(out_dir) if out_dir is not None else Path('.')
    rows = comparison_table(reports, out_dir=target)

    click.echo((target / 'comparison.txt').read_text(encoding='utf-8'), nl=False)
    click.echo(f"selected: {rows[0].model_name} (f1={f1_from_pr(rows[0].precision, rows[0].recall):.4f})")


def _benchmark_sample(manifest: DatasetManifest, size: int) -> DatasetManifest:
    """Up to ``size`` records, alternating classes so both are represented."""
    queues = [list(manifest.by_label(label)) for label in ClassLabel]
    chosen = []
    while len(chosen) < size and any(queues):
        for queue in queues:
            if queue and len(chosen) < size:
                chosen.append(queue.pop(0))
    return DatasetManifest.from_records(chosen)


@click.command('benchmark')
@checkpoint_option
@config_option
@data_dir_option
@out_dir_option
@click.option('--repetitions', type=click.IntRange(min=3), default=3, show_default=True)
@click.option('--sample-size', type=click.IntRange(min=1), default=8, show_default=True)
@click.option('--hardware-note', type=str, default='', help='Free-text description of the machine.')
@click.option('--with-explanation', is_flag=True, default=False, help='Also time one LIME explanation.')
@handle_command_errors
@track_command
def benchmark(
    checkpoint: Optional[Path],
    config_path: Optional[Path],
    data_dir: Optional[Path],
    out_dir: Optional[Path],
    repetitions: int,
    sample_size: int,
    hardware_note: str,
    with_explanation: bool,
) -> None:
    """Time one training epoch and per-image inference."""
    config = resolve_run_config(config_path, checkpoint=checkpoint, data_dir=data_dir, out_dir=out_dir)
    model, _ = load_checkpoint(checkpoint_of(config))
    target = out_dir_of(config)
    write_effective_config(config, target)

    sample = _benchmark_sample(scan_dataset(data_dir_of(config)), sample_size)
    report = run_benchmark(
        model,
        sample,
        train_config=config.train,
        repetitions=repetitions,
        hardware_note=hardware_note,
        lime_config=config.lime if with_explanation else None,
    )
    write_json(report.to_dict(), target / 'timing.json')
    click.echo(
        f"train {report.train_seconds_per_epoch:.3f} s/epoch, "
        f"inference {report.inference_seconds_per_image:.4f} s/image over {report.n_images} images"
    )
