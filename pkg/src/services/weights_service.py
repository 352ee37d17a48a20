"""
Pretrained weight retrieval with an on-disk cache.
"""
import hashlib
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional

import httpx
import torch

from src.services.error_handler import NotFoundError, WeightsChecksumError, WeightsError, WeightsNetworkError
from src.services.logging_service import get_logger

logger = get_logger(__name__)

# torchvision names weight files "<arch>-<sha256 prefix>.pth"
HASH_PREFIX = re.compile(r'-([a-f0-9]{6,})\.')


def expected_digest_prefix(url: str) -> Optional[str]:
    match = HASH_PREFIX.search(url.rsplit('/', 1)[-1])
    return match.group(1) if match else None


def sha256_of(path: Path, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def verify_digest(path: Path, prefix: Optional[str]) -> None:
    if prefix is None:
        return
    actual = sha256_of(path)
    if not actual.startswith(prefix):
        raise WeightsChecksumError(
            f"checksum mismatch for {path.name}",
            {"expected_prefix": prefix, "actual": actual},
        )


def fetch_weights(url: str, cache_dir: Path, timeout: float = 60.0) -> Path:
    """Return a verified local copy of ``url``, downloading it on first use."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    target = cache_dir / url.rsplit('/', 1)[-1]
    prefix = expected_digest_prefix(url)

    if target.exists():
        verify_digest(target, prefix)
        logger.debug("weights_cache_hit", path=str(target))
        return target

    logger.info("weights_download_started", url=url, target=str(target))
    fd, tmp_name = tempfile.mkstemp(dir=cache_dir, suffix='.part')
    tmp_path = Path(tmp_name)
    try:
        with os.fdopen(fd, 'wb') as handle:
            with httpx.stream('GET', url, timeout=timeout, follow_redirects=True) as response:
                response.raise_for_status()
                for chunk in response.iter_bytes():
                    handle.write(chunk)
        verify_digest(tmp_path, prefix)
        tmp_path.replace(target)
    except httpx.HTTPError as exc:
        raise WeightsNetworkError(f"could not download {url}", {"original_error": str(exc)}) from exc
    finally:
        if tmp_path.exists():
            tmp_path.unlink()

    logger.info("weights_download_completed", path=str(target))
    return target


def load_state_dict(path: Path) -> Dict[str, Any]:
    """Read a torch state dict from a local file."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError('Weights file', f"weights file not found: {path}")
    try:
        state = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as exc:
        raise WeightsError(f"cannot read weights from {path}", {"original_error": str(exc)}) from exc
    if isinstance(state, dict) and 'state_dict' in state and isinstance(state['state_dict'], dict):
        state = state['state_dict']
    if not isinstance(state, dict):
        raise WeightsError(f"{path} does not hold a state dict")
    return state
