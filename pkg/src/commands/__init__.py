"""
Commands package for organizing the pipeline's subcommands.
"""
import click

from src.services.logging_service import get_logger

from .data import analyze, make_synthetic
from .reports import benchmark, compare, explain
from .training import evaluate, predict, train

COMMANDS = (make_synthetic, analyze, train, evaluate, predict, explain, compare, benchmark)


def register_commands(cli: click.Group) -> None:
    """Register all subcommands with the command group."""
    for command in COMMANDS:
        cli.add_command(command)

    get_logger(__name__).debug("commands_registered", commands=[c.name for c in COMMANDS])
