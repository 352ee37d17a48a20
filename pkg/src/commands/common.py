"""
Helpers shared by the command modules: config resolution, provenance
and dataset reconstruction from checkpoints.
"""
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from src.config import RunConfig, SplitSpec, load_run_config
from src.extensions import get_settings, seed_everything
from src.models import DatasetManifest, SplitTag
from src.services.dataset_service import assign_splits, scan_dataset
from src.services.error_handler import ConfigurationError, InputError, OutputError
from src.services.logging_service import get_logger

logger = get_logger(__name__)

EFFECTIVE_CONFIG_FILE = 'effective_config.json'
ALL_SPLITS = 'all'


def run_overrides(
    data_dir: Optional[Path] = None,
    out_dir: Optional[Path] = None,
    checkpoint: Optional[Path] = None,
    seed: Optional[int] = None,
    backbone: Optional[str] = None,
    weights: Optional[str] = None,
    epochs: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> Dict[str, Dict[str, Any]]:
    """Nested override mapping built from the flags that were given."""
    overrides: Dict[str, Dict[str, Any]] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put('paths', 'data_dir', str(data_dir) if data_dir is not None else None)
    put('paths', 'out_dir', str(out_dir) if out_dir is not None else None)
    put('paths', 'checkpoint', str(checkpoint) if checkpoint is not None else None)
    put('backbone', 'name', backbone)
    put('backbone', 'weights_source', weights)
    put('train', 'epochs', epochs)
    put('train', 'batch_size', batch_size)
    if seed is not None:
        for section in ('train', 'split', 'lime'):
            put(section, 'seed', seed)
    return overrides


def resolve_run_config(config_path: Optional[Path], **flags: Any) -> RunConfig:
    """Config file merged with flag overrides; seeds the process RNGs."""
    config = load_run_config(config_path, run_overrides(**flags))
    seed_everything(config.train.seed)
    return config


def out_dir_of(config: RunConfig, default: Optional[Path] = None) -> Path:
    """``paths.out_dir``, or ``default`` when neither flag nor file set it."""
    out_dir = Path(config.paths.out_dir)
    if default is not None and 'out_dir' not in config.paths.model_fields_set:
        out_dir = Path(default)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(out_dir, exc) from exc
    return out_dir


def data_dir_of(config: RunConfig) -> Path:
    if not config.paths.data_dir:
        raise ConfigurationError("a dataset directory is required (--data-dir or paths.data_dir)", path='paths.data_dir')
    return Path(config.paths.data_dir)


def with_data_dir(config: RunConfig, data_dir: Any) -> RunConfig:
    """Copy of ``config`` with ``paths.data_dir`` filled in."""
    return config.model_copy(update={'paths': config.paths.model_copy(update={'data_dir': str(data_dir)})})


def checkpoint_of(config: RunConfig) -> Path:
    if not config.paths.checkpoint:
        raise ConfigurationError("a checkpoint is required (--checkpoint or paths.checkpoint)", path='paths.checkpoint')
    return Path(config.paths.checkpoint)


def write_effective_config(config: RunConfig, out_dir: Path, name: str = EFFECTIVE_CONFIG_FILE) -> Path:
    """Echo the merged configuration next to the artifacts it produced."""
    path = out_dir / name
    try:
        path.write_text(config.to_json(), encoding='utf-8')
    except OSError as exc:
        raise OutputError(path, exc) from exc
    return path


def num_workers() -> int:
    return int(get_settings().NUM_WORKERS)


def split_manifest(data_dir: Path, spec: SplitSpec, split: str) -> Tuple[DatasetManifest, DatasetManifest]:
    """Scan ``data_dir``, tag every record and select ``split`` (or all)."""
    tagged = assign_splits(scan_dataset(data_dir), spec)
    if split == ALL_SPLITS:
        return tagged, tagged
    subset = tagged.subset(SplitTag.parse(split))
    if len(subset) == 0:
        raise InputError(f"split {split!r} of {data_dir} is empty")
    return tagged, subset


def checkpoint_split_spec(sidecar: Dict[str, Any]) -> SplitSpec:
    """The split a checkpoint was trained with, or the default one."""
    raw = sidecar.get('metadata', {}).get('split')
    if raw is None:
        logger.warning("checkpoint_without_split", fallback=SplitSpec().model_dump(mode='json'))
        return SplitSpec()
    try:
        return SplitSpec.model_validate(raw)
    except ValueError as exc:
        raise InputError(f"checkpoint split metadata is invalid: {exc}") from exc
