"""Logging setup: JSON or console formatting on the root logger."""

import logging
from pathlib import Path

try:
    from pythonjsonlogger.json import JsonFormatter
except ImportError:  # python-json-logger < 3
    from pythonjsonlogger.jsonlogger import JsonFormatter

from aaa_toolkit.config import settings

CONSOLE_FORMAT = "%(asctime)s %(levelname)-8s %(name)s: %(message)s"
JSON_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"

_handlers: list[logging.Handler] = []


def _formatter(fmt: str) -> logging.Formatter:
    if fmt == "json":
        return JsonFormatter(JSON_FORMAT)
    return logging.Formatter(CONSOLE_FORMAT)


def configure_logging(
    level: str | None = None,
    fmt: str | None = None,
    log_file: Path | None = None,
) -> None:
    """
    Configure the root logger.

    Calling this again replaces the handlers installed by the previous call.

    Args:
        level: Log level name (defaults to settings.log_level)
        fmt: "json" or "console" (defaults to settings.log_format)
        log_file: Optional file that receives a JSON copy of every record
    """
    root = logging.getLogger()
    for handler in _handlers:
        root.removeHandler(handler)
        handler.close()
    _handlers.clear()

    level_name = (level or settings.log_level).upper()
    stream = logging.StreamHandler()
    stream.setFormatter(_formatter(fmt or settings.log_format))
    _handlers.append(stream)

    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
        file_handler.setFormatter(_formatter("json"))
        _handlers.append(file_handler)

    for handler in _handlers:
        root.addHandler(handler)
    root.setLevel(level_name)
