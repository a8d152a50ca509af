import logging

from rich.console import Console
from rich.logging import RichHandler

ROOT = "ibac"

console = Console(stderr=True)


def get_logger(name: str) -> logging.Logger:
    if not name.startswith(ROOT):
        name = f"{ROOT}.{name}"
    return logging.getLogger(name)


def configure_logging(quiet: bool = False, level: int = logging.INFO) -> logging.Logger:
    """
    Install one rich handler on the package logger. Safe to call repeatedly.
    """
    logger = logging.getLogger(ROOT)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING if quiet else level)
    logger.propagate = False
    return logger
