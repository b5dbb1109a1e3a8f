"""File-only logging for tnml runs.

With --log-file (or TNML_LOG_FILE) records are appended to that file and
nothing is written to stdout or stderr, so the rich tables printed by the CLI
stay readable. Library modules call the `log_*` helpers below; until
`configure_global_logger` runs they discard everything.

Training code writes key=value event lines through `log_event`, one per bond
visit or sweep, so a run log can be filtered with grep or split on spaces.
"""

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

LOGGER_NAME = "tnml"
LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

_logger: logging.Logger | None = None


def _level_number(name: str) -> int:
    level = logging.getLevelName(name.upper())
    return level if isinstance(level, int) else logging.INFO


def setup_logging(
    log_file: Path | str | None = None,
    log_level: str = "INFO",
    name: str = LOGGER_NAME,
) -> logging.Logger:
    """Build the named logger, writing only to `log_file`.

    Any handlers from an earlier call are replaced. Without a file the logger
    gets a `NullHandler`.

    Args:
        log_file: Destination file; parent directories are created.
        log_level: Level name such as "DEBUG" or "WARNING". Unknown names
            fall back to INFO.
        name: Logger name.

    Returns:
        The configured logger.

    Example:
        >>> logger = setup_logging(log_file="/tmp/tnml.log", log_level="DEBUG")
        >>> logger.debug("bond bond=0 step=0.01")
    """
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()
    logger.propagate = False

    if log_file is None:
        logger.setLevel(logging.WARNING)
        logger.addHandler(logging.NullHandler())
        return logger

    path = Path(log_file)
    path.parent.mkdir(parents=True, exist_ok=True)
    level = _level_number(log_level)

    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
    handler.setLevel(level)
    logger.setLevel(level)
    logger.addHandler(handler)
    return logger


def configure_global_logger(
    log_file: Path | str | None = None,
    log_level: str = "INFO",
) -> logging.Logger:
    """Install the logger behind the module-level helpers."""
    global _logger
    _logger = setup_logging(log_file=log_file, log_level=log_level)
    return _logger


def reset_global_logger() -> None:
    """Close the global logger's handlers and silence the helpers."""
    global _logger
    if _logger is not None:
        for handler in list(_logger.handlers):
            handler.close()
        _logger.handlers.clear()
    _logger = None


def _emit(level: int, message: str, exc_info: bool = False) -> None:
    if _logger is not None:
        _logger.log(level, message, exc_info=exc_info)


def log_debug(message: str) -> None:
    """Write a DEBUG record."""
    _emit(logging.DEBUG, message)


def log_info(message: str) -> None:
    """Write an INFO record."""
    _emit(logging.INFO, message)


def log_warning(message: str) -> None:
    """Write a WARNING record."""
    _emit(logging.WARNING, message)


def log_error(message: str) -> None:
    """Write an ERROR record."""
    _emit(logging.ERROR, message)


def log_exception(message: str) -> None:
    """Write an ERROR record with the active traceback."""
    _emit(logging.ERROR, message, exc_info=True)


def format_event(event: str, **fields: Any) -> str:
    """Render an event name and fields as a single key=value line.

    Floats are written with 6 significant digits; lists are joined by commas.

    Args:
        event: Short event name, e.g. "sweep" or "bond".
        **fields: Values to attach.

    Returns:
        The formatted line, e.g. ``"sweep n=1 cost=12.5 train_error=0.1"``.
    """
    parts = [event]
    for key, value in fields.items():
        if isinstance(value, float):
            text = f"{value:.6g}"
        elif isinstance(value, list | tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        parts.append(f"{key}={text}")
    return " ".join(parts)


def log_event(event: str, level: str = "info", **fields: Any) -> None:
    """Write a key=value event line at the named level."""
    if _logger is not None:
        _emit(_level_number(level), format_event(event, **fields))


@contextmanager
def timed(event: str, **fields: Any) -> Iterator[None]:
    """Log the wall time of the enclosed block as a debug event."""
    start = time.perf_counter()
    try:
        yield
    finally:
        log_event(event, level="debug", seconds=time.perf_counter() - start, **fields)
