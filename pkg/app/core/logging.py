import logging
from typing import Optional

from rich.logging import RichHandler

from .config import settings

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Install a rich handler on the root logger once"""
    global _configured
    level = (level or settings.LOG_LEVEL).upper()

    if _configured:
        logging.getLogger().setLevel(level)
        return

    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
    )
    _configured = True
