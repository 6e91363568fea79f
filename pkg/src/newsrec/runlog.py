"""Line-delimited structured logging shared by every subcommand."""

from __future__ import annotations

import json
import logging
import sys
import threading
import time
from pathlib import Path

ROOT = "newsrec"


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record: ts, level, component, message and optional payload.

    Timestamps never go backwards within a process.
    """

    def __init__(self):
        super().__init__()
        self._last = 0.0
        self._lock = threading.Lock()

    def format(self, record: logging.LogRecord) -> str:
        with self._lock:
            ts = max(record.created, self._last)
            self._last = ts
        out = {
            "ts": round(ts, 6),
            "level": record.levelname,
            "component": record.name,
            "message": record.getMessage(),
        }
        payload = getattr(record, "payload", None)
        if payload is not None:
            out["payload"] = payload
        if record.exc_info:
            out["exception"] = self.formatException(record.exc_info)
        return json.dumps(out, sort_keys=True, default=str)


class ErrorCounter(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.ERROR)
        self.count = 0

    def emit(self, record):
        self.count += 1


def setup(log_file: str | Path | None = None, level: int = logging.INFO, stream=None) -> ErrorCounter:
    """Route the package logger to stderr and, optionally, an appended run file."""
    logger = logging.getLogger(ROOT)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    logger.setLevel(level)
    logger.propagate = False
    fmt = JsonLineFormatter()
    console = logging.StreamHandler(stream or sys.stderr)
    console.setFormatter(fmt)
    logger.addHandler(console)
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(log_file, encoding="utf-8")
        fh.setFormatter(fmt)
        logger.addHandler(fh)
    counter = ErrorCounter()
    logger.addHandler(counter)
    return counter


def get(component: str) -> logging.Logger:
    return logging.getLogger(f"{ROOT}.{component}")


def now() -> float:
    return time.time()
