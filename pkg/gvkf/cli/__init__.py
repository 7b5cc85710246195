"""Command-line interface for the GVKF reference pipeline."""

from gvkf.cli.main import cli, main

__all__ = ["cli", "main"]
