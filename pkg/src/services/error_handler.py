"""
Error handling service with custom exception classes.

Every failure the pipeline reports on purpose derives from
``PipelineError``; the exit code travels with the exception so the CLI
layer can translate it without a lookup table.
"""
import sys
import traceback
from dataclasses import dataclass
from functools import wraps
from typing import Any, Callable, Dict, Optional, TypeVar

import click

from src.services.logging_service import get_logger, log_exception

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

F = TypeVar('F', bound=Callable[..., Any])


@dataclass
class ErrorPayload:
    """Standardized error report format."""
    error: str
    message: str
    exit_code: int
    details: Optional[Dict[str, Any]] = None
    run_id: Optional[str] = None


class PipelineError(Exception):
    """Base exception class for pipeline errors."""

    def __init__(self, message: str, exit_code: int = EXIT_RUNTIME, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class InputError(PipelineError):
    """Invalid user input or data."""

    def __init__(self, message: str = "Invalid input", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, EXIT_USAGE, details)


class EmptyDatasetError(InputError):
    """No usable images were found."""

    def __init__(self, message: str = "no images found", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details)


class NotFoundError(InputError):
    """Resource not found exception."""

    def __init__(self, resource: str = "Resource", message: Optional[str] = None):
        message = message or f"{resource} not found"
        super().__init__(message, {"resource": resource})


class ConfigurationError(InputError):
    """Configuration value violates its schema or a structural constraint."""

    def __init__(self, message: str = "Invalid configuration", path: str = ''):
        self.path = path
        super().__init__(message, {"path": path} if path else None)


class RegistryError(InputError):
    """Unknown backbone or illegal backbone/weights pairing."""


class UndefinedMetricError(InputError):
    """Metric is undefined for the given labels."""


class CheckpointError(InputError):
    """Checkpoint cannot be used."""


class CheckpointFormatError(CheckpointError):
    """Checkpoint files are corrupt or incomplete."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an incompatible schema version."""

    def __init__(self, found: Any, expected: Any):
        super().__init__(
            f"checkpoint schema_version {found!r} is incompatible (expected {expected!r})",
            {"found": found, "expected": expected},
        )


class ContractError(PipelineError):
    """A numeric precondition was violated."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, EXIT_RUNTIME, details)


class ImageDecodeError(PipelineError):
    """Raster file could not be decoded."""

    def __init__(self, path: Any, original_error: Optional[Exception] = None):
        details = {"path": str(path)}
        if original_error:
            details["original_error"] = str(original_error)
        self.path = path
        super().__init__(f"cannot decode image {path}", EXIT_RUNTIME, details)


class ShapeError(PipelineError):
    """Tensor shape does not match what the model expects."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, EXIT_RUNTIME, details)


class AssemblyError(ShapeError):
    """Head was built for a different feature shape than the backbone produces."""


class WeightsError(PipelineError):
    """Pretrained weights could not be obtained."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, EXIT_RUNTIME, details)


class WeightsNetworkError(WeightsError):
    """Weight download failed at the transport level."""


class WeightsChecksumError(WeightsError):
    """Downloaded or cached weights do not match their published digest."""


class TrainingDivergenceError(PipelineError):
    """Loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(
            f"training diverged at epoch {epoch}: loss={loss!r}",
            EXIT_RUNTIME,
            {"epoch": epoch, "loss": repr(loss)},
        )


class UnsupportedOperationError(PipelineError):
    """Operation not available for the given model."""

    def __init__(self, message: str):
        super().__init__(message, EXIT_RUNTIME)


class OutputError(PipelineError):
    """Artifact could not be written."""

    def __init__(self, path: Any, original_error: Optional[Exception] = None):
        details = {"path": str(path)}
        if original_error:
            details["original_error"] = str(original_error)
        super().__init__(f"cannot write {path}", EXIT_RUNTIME, details)


def create_error_payload(error: Exception, run_id: Optional[str] = None, debug: bool = False) -> Dict[str, Any]:
    """Create standardized error payload."""
    if isinstance(error, PipelineError):
        payload = ErrorPayload(
            error=error.__class__.__name__,
            message=error.message,
            exit_code=error.exit_code,
            details=error.details or None,
            run_id=run_id,
        )
    else:
        details = {"traceback": traceback.format_exc()} if debug else None
        payload = ErrorPayload(
            error="InternalError",
            message=str(error) if debug else "An internal error occurred",
            exit_code=EXIT_RUNTIME,
            details=details,
            run_id=run_id,
        )

    data: Dict[str, Any] = {
        "error": payload.error,
        "message": payload.message,
        "exit_code": payload.exit_code,
    }
    if payload.details:
        data["details"] = payload.details
    if payload.run_id:
        data["run_id"] = payload.run_id
    return data


def handle_command_errors(f: F) -> F:
    """Translate pipeline exceptions raised by a CLI command into exit codes."""
    logger = get_logger(__name__)

    @wraps(f)
    def decorated(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except PipelineError as error:
            payload = create_error_payload(error, run_id=getattr(error, 'run_id', None))
            logger.warning("command_error", **payload)
            click.echo(f"error: {error.message}", err=True)
            sys.exit(error.exit_code)
        except Exception as error:
            log_exception(logger, error, {"exit_code": EXIT_RUNTIME, "run_id": getattr(error, 'run_id', None)})
            click.echo(f"error: {error.__class__.__name__}: {error}", err=True)
            sys.exit(EXIT_RUNTIME)

    return decorated  # type: ignore[return-value]
