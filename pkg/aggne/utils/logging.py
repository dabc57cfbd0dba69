"""Package logger of aggne and its verbosity controls."""

from __future__ import annotations

import logging
import os
from typing import ClassVar

ENV_VARIABLE = "AGGNE_LOG"
DEFAULT_VERBOSITY = "info"

# one step above CRITICAL silences the package logger
OFF = logging.CRITICAL + 10

LEVELS = {
    "OFF": OFF,
    "CRITICAL": logging.CRITICAL,
    "ERROR": logging.ERROR,
    "WARNING": logging.WARNING,
    "INFO": logging.INFO,
    "DEBUG": logging.DEBUG,
    "NOTSET": logging.NOTSET,
}


class CustomFormatter(logging.Formatter):
    """Colour the level and add the source location to debug and error records."""

    short_format = "%(levelname)s:%(name)s: %(message)s"
    long_format = "%(asctime)s - %(levelname)s:%(name)s: %(message)s (%(filename)s:%(lineno)d)"
    colours: ClassVar = {
        logging.DEBUG: ("\x1b[38;21m", long_format),
        logging.INFO: ("\x1b[32;21m", short_format),
        logging.WARNING: ("\x1b[33;21m", short_format),
        logging.ERROR: ("\x1b[31;21m", long_format),
        logging.CRITICAL: ("\x1b[31;1m", long_format),
    }
    reset = "\x1b[0m"

    def format(self, record):
        colour, fmt = self.colours.get(record.levelno, ("", self.short_format))
        return logging.Formatter(colour + fmt + self.reset).format(record)


def get_log_level(level: str) -> int:
    """Translate a level name into a `logging` level.

    Besides the standard names, the ``AGGNE_LOG`` verbosity words ``off``,
    ``info`` and ``debug`` are accepted. Matching ignores case.

    Parameters
    ----------
    level : str
        Level name.

    Returns
    -------
    int
        The `logging` level.

    Raises
    ------
    ValueError
        If ``level`` names no known level.
    """
    try:
        return LEVELS[str(level).upper()]
    except KeyError:
        raise ValueError(
            f"The log level option {level} is not valid, choose from {list(LEVELS)}."
        ) from None


def initialise_logger(log_level: str | None = None) -> logging.Logger:
    """Set up the ``aggne`` logger with a single coloured stream handler.

    Parameters
    ----------
    log_level : str, optional
        Initial level. Read from ``AGGNE_LOG`` when not given, falling back to
        ``info``, by default None

    Returns
    -------
    logging.Logger
        The package logger.
    """
    if log_level is None:
        log_level = os.environ.get(ENV_VARIABLE, DEFAULT_VERBOSITY)
    aggne_logger = logging.getLogger("aggne")
    if not aggne_logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(CustomFormatter())
        aggne_logger.addHandler(handler)
    aggne_logger.propagate = False
    set_log_level(aggne_logger, log_level)
    return aggne_logger


def set_log_level(aggne_logger: logging.Logger, log_level: str) -> None:
    """Apply ``log_level`` to ``aggne_logger`` and all of its handlers."""
    level = get_log_level(log_level)
    aggne_logger.setLevel(level)
    for handler in aggne_logger.handlers:
        handler.setLevel(level)


logger = initialise_logger()
