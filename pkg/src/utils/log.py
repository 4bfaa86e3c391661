"""
Logging setup: stdlib loggers rendered through rich.
"""

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

console = Console()


def setup_logging(level: str = "INFO", rich_console: Optional[Console] = None) -> None:
    """Route all package loggers through a single RichHandler."""
    handler = RichHandler(
        console=rich_console or console,
        show_path=False,
        rich_tracebacks=True,
        markup=False,
    )
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[handler],
        force=True,
    )
    # numba/librosa chatter
    logging.getLogger("numba").setLevel(logging.WARNING)
