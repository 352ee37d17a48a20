"""
Process-wide shared state: plotting backend, RNG seeding, torch runtime.
"""
import os
import random
from typing import Any, Optional

import matplotlib

matplotlib.use('Agg')

import numpy as np  # noqa: E402
import torch  # noqa: E402

from src.services.logging_service import get_logger  # noqa: E402

logger = get_logger(__name__)

_settings: Optional[Any] = None


def seed_everything(seed: int) -> None:
    """Seed every RNG the pipeline draws from."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def init_torch_runtime(num_threads: Optional[int] = None) -> None:
    """Deterministic CPU kernels and a pinned thread pool."""
    os.environ.setdefault('CUBLAS_WORKSPACE_CONFIG', ':4096:8')
    torch.use_deterministic_algorithms(True, warn_only=True)
    if num_threads:
        torch.set_num_threads(num_threads)


def init_extensions(settings: Any) -> None:
    """Initialize all extensions."""
    global _settings
    _settings = settings
    init_torch_runtime()
    os.makedirs(settings.PIPELINE_CACHE_DIR, exist_ok=True)
    logger.debug("extensions_initialized", cache_dir=settings.PIPELINE_CACHE_DIR, threads=torch.get_num_threads())


def get_settings() -> Any:
    """Settings installed by ``init_extensions`` (environment defaults otherwise)."""
    global _settings
    if _settings is None:
        from src.config import get_config
        _settings = get_config()
    return _settings
