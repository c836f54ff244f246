import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from rich.console import Console
from rich.logging import RichHandler

from ensemble_bound.core.settings import Settings, get_settings


def make_console_handler(level: int = logging.INFO) -> RichHandler:
    """Rich handler writing to stderr; stdout carries only payloads."""
    return RichHandler(
        level=level,
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )


def setup_logging(settings: Optional[Settings] = None) -> None:
    """Configure package logging."""
    settings = settings or get_settings()
    log_level = getattr(logging, settings.LOG_LEVEL)

    file_logging_available = settings.LOG_FILE is not None
    if file_logging_available:
        log_path = Path(settings.LOG_FILE)
        try:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            log_path.touch()
        except (PermissionError, OSError):
            file_logging_available = False
            print(
                f"Warning: Cannot write to {log_path}. File logging disabled.",
                file=sys.stderr,
            )

    handlers = ["console", "file"] if file_logging_available else ["console"]

    logging_config: Dict[str, Any] = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "format": "%(name)s - %(message)s",
                "datefmt": "%Y-%m-%d %H:%M:%S",
            },
            "json": {
                "()": "pythonjsonlogger.jsonlogger.JsonFormatter",
                "format": "%(asctime)s %(name)s %(levelname)s %(message)s",
            },
        },
        "handlers": {
            "console": {
                "()": "ensemble_bound.core.logging.make_console_handler",
                "level": log_level,
                "formatter": "default",
            },
        },
        "loggers": {
            "ensemble_bound": {
                "handlers": handlers,
                "level": log_level,
                "propagate": False,
            },
        },
        "root": {
            "handlers": ["console"],
            "level": logging.WARNING,
        },
    }
    if file_logging_available:
        logging_config["handlers"]["file"] = {
            "level": log_level,
            "class": "logging.handlers.RotatingFileHandler",
            "formatter": "json",
            "filename": settings.LOG_FILE,
            "maxBytes": 10485760,  # 10 MB
            "backupCount": 5,
            "encoding": "utf8",
        }

    from logging.config import dictConfig

    try:
        dictConfig(logging_config)
    except Exception as e:
        logging.basicConfig(
            level=log_level,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )
        print(
            f"Warning: Failed to configure logging: {e}. Using basic console logging.",
            file=sys.stderr,
        )

    logger = logging.getLogger("ensemble_bound")
    logger.debug(
        f"{settings.PROJECT_NAME} v{settings.VERSION} logging at {settings.LOG_LEVEL}"
    )
