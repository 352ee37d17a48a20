"""
Logging service with structured logging support.
"""
import logging
import logging.handlers
import os
import sys
from typing import Any, Dict, Optional

import structlog


class CustomFormatter(logging.Formatter):
    """Custom formatter with colors for console output."""

    COLORS = {
        'DEBUG': '\033[36m',     # Cyan
        'INFO': '\033[32m',      # Green
        'WARNING': '\033[33m',   # Yellow
        'ERROR': '\033[31m',     # Red
        'CRITICAL': '\033[35m',  # Magenta
    }
    RESET = '\033[0m'

    def format(self, record):
        if getattr(record, 'color', False):
            color = self.COLORS.get(record.levelname, '')
            record = logging.makeLogRecord(record.__dict__)
            record.levelname = f"{color}{record.levelname}{self.RESET}"

        return super().format(record)


def setup_logging(settings: Any) -> None:
    """Configure stdlib handlers and structlog from process settings."""
    level_name = getattr(settings, 'LOG_LEVEL', 'INFO')
    log_level = getattr(logging, level_name)
    log_format = getattr(settings, 'LOG_FORMAT', '%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    log_file = getattr(settings, 'LOG_FILE', '')
    render_json = getattr(settings, 'LOG_JSON', False)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # Console goes to stderr so command output on stdout stays parseable
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(CustomFormatter(log_format))

    def add_color_to_record(record):
        record.color = sys.stderr.isatty()
        return True

    console_handler.addFilter(add_color_to_record)
    root_logger.addHandler(console_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5
        )
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(log_format))
        root_logger.addHandler(file_handler)

    renderer = structlog.processors.JSONRenderer() if render_json else structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # Third-party chatter
    for noisy in ('matplotlib', 'PIL', 'httpx', 'httpcore'):
        logging.getLogger(noisy).setLevel(max(log_level, logging.WARNING))

    get_logger(__name__).debug("logging_configured", level=level_name, log_file=log_file or None)


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)


def log_exception(logger: structlog.stdlib.BoundLogger, exc: Exception, context: Optional[Dict[str, Any]] = None) -> None:
    """Log exception with context."""
    logger.error(
        "exception_occurred",
        exception_type=exc.__class__.__name__,
        exception_message=str(exc),
        context=context or {},
        exc_info=True,
    )


def log_performance(
    logger: structlog.stdlib.BoundLogger,
    operation: str,
    duration: float,
    context: Optional[Dict[str, Any]] = None,
    warn_above: float = 60.0,
) -> None:
    """Log performance metrics."""
    level = logging.WARNING if duration > warn_above else logging.INFO

    logger.log(
        level,
        "performance",
        operation=operation,
        duration_seconds=round(duration, 6),
        context=context or {},
    )
