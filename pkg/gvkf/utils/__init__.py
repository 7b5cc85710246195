"""Logging setup and file codecs."""

from gvkf.utils.logging import setup_logging

__all__ = [
    "setup_logging",
]
