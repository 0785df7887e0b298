import logging
import sys
from typing import Any, MutableMapping, Optional, TextIO

from app.core.config import settings

DEFAULT_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | run=%(run_id)s step=%(step)s | %(message)s"
CONTEXT_FIELDS = ("run_id", "step", "shard")


class ContextFilter(logging.Filter):
    """Fills run_id/step/shard with "-" so call sites may omit ``extra``."""

    def filter(self, record: logging.LogRecord) -> bool:  # type: ignore[override]
        for name in CONTEXT_FIELDS:
            if not hasattr(record, name):
                setattr(record, name, "-")
        return True


class RunLogger(logging.LoggerAdapter):
    """Adapter that stamps every record with a run id; per-call ``extra`` wins."""

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> tuple[Any, MutableMapping[str, Any]]:
        kwargs["extra"] = {**(self.extra or {}), **kwargs.get("extra", {})}
        return msg, kwargs


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None, *, stream: Optional[TextIO] = None) -> None:
    """(Re)configure the root logger; logs go to stderr, stdout is left to CLI output."""
    name = (level or settings.runtime.log_level).upper()
    resolved_level = logging.getLevelName(name)
    if not isinstance(resolved_level, int):
        resolved_level = logging.INFO

    root = logging.getLogger()
    root.setLevel(resolved_level)
    for h in list(root.handlers):
        root.removeHandler(h)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(fmt or DEFAULT_FORMAT))
    handler.addFilter(ContextFilter())
    root.addHandler(handler)


def get_logger(name: str) -> logging.Logger:
    if not logging.getLogger().handlers:
        setup_logging()
    return logging.getLogger(name)


def run_logger(name: str, run_id: str) -> RunLogger:
    return RunLogger(get_logger(name), {"run_id": run_id})
