"""
Main command-line factory and configuration.
"""
import os
from typing import Optional

import click

from src.commands import register_commands
from src.config import get_config
from src.extensions import init_extensions
from src.services.logging_service import get_logger, setup_logging


def create_cli(config_name: Optional[str] = None) -> click.Group:
    """Command-line factory pattern."""

    @click.group(context_settings={'help_option_names': ['-h', '--help']})
    @click.pass_context
    def cli(ctx: click.Context) -> None:
        """Ultrasound frame classification pipeline."""
        # Load configuration
        settings = get_config(config_name or os.getenv('PIPELINE_ENV', 'development'))

        # Setup logging
        setup_logging(settings)

        # Initialize extensions
        init_extensions(settings)

        ctx.obj = settings
        get_logger(__name__).debug("cli_initialized", env=settings.PIPELINE_ENV)

    # Register commands
    register_commands(cli)

    return cli


# Create command-line instance
cli = create_cli()

if __name__ == '__main__':
    cli()
