"""
Command middleware: per-invocation run id, structured context and timing.
"""
import time
import uuid
from contextlib import contextmanager
from functools import wraps
from typing import Any, Callable, Iterator, TypeVar

import click
import structlog

from src.services.error_handler import EXIT_OK, EXIT_RUNTIME
from src.services.logging_service import get_logger

F = TypeVar('F', bound=Callable[..., Any])

logger = get_logger(__name__)


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


@contextmanager
def command_context(command: str, **context: Any) -> Iterator[str]:
    """Bind ``run_id`` and ``command`` into every log event of the block."""
    run_id = new_run_id()
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(run_id=run_id, command=command)
    started = time.perf_counter()
    logger.info("command_started", **context)
    status, exit_code = 'failed', EXIT_RUNTIME
    try:
        yield run_id
        status, exit_code = 'completed', EXIT_OK
    except Exception as exc:
        exit_code = getattr(exc, 'exit_code', EXIT_RUNTIME)
        # context is cleared below, so the error handler reads the id from here
        exc.run_id = run_id
        raise
    finally:
        duration = time.perf_counter() - started
        logger.info(f"command_{status}", duration_seconds=round(duration, 3), exit_code=exit_code)
        structlog.contextvars.clear_contextvars()


def track_command(f: F) -> F:
    """Run a click command callback inside ``command_context``."""

    @wraps(f)
    def decorated(*args: Any, **kwargs: Any) -> Any:
        ctx = click.get_current_context(silent=True)
        name = ctx.info_name if ctx is not None and ctx.info_name else f.__name__
        params = {key: str(value) for key, value in kwargs.items() if value is not None}
        with command_context(name, **params):
            return f(*args, **kwargs)

    return decorated  # type: ignore[return-value]
