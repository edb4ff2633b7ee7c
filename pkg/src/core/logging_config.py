"""
Logging setup shared by the command-line entry point and scripts
"""
import logging
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once for the process

    Args:
        level: log level name; falls back to the configured settings value
    """
    if level is None:
        from src.core.config import get_settings

        level = get_settings().log_level
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def progress_enabled() -> bool:
    """Progress bars only when stderr is an interactive terminal"""
    return sys.stderr.isatty()
