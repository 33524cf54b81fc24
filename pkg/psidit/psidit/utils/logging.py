# SPDX-License-Identifier: MIT
"""Logger setup, terminal coloring and the line-delimited metrics writer."""

import json
import logging
import sys
from pathlib import Path
import typing as tp


def colorize(text: str, color: str) -> str:
    code = f"\033[{color}m"
    restore = "\033[0m"
    return "".join([code, text, restore])


def make_log(level: str, msg: str) -> str:
    if level == "warning":
        prefix = colorize("[Warn]", "1;31")
    elif level == "info":
        prefix = colorize("[Info]", "1;34")
    elif level == "error":
        prefix = colorize("[Err ]", "1;31")
    else:
        raise ValueError(f"Unknown level {level}")
    return prefix + " " + msg


def print_log(level: str, msg: str, stream=None):
    print(make_log(level, msg), file=stream or sys.stderr)


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever `sys.stderr` is at emit time."""

    def __init__(self):
        super().__init__(sys.stderr)

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def setup_logger(
    name: str = "psidit",
    level: int = logging.INFO,
    log_file: tp.Optional[tp.Union[str, Path]] = None,
) -> logging.Logger:
    """Send `name` and its children to stderr, stdout stays free for command output
    (annotation rows, metric summaries). Repeated calls only update the level and add a
    file handler for a `log_file` not seen yet."""
    logger = logging.getLogger(name)
    logger.setLevel(level)
    formatter = logging.Formatter("%(asctime)s %(levelname).1s %(name)s: %(message)s", "%H:%M:%S")
    if not any(isinstance(h, _StderrHandler) for h in logger.handlers):
        console = _StderrHandler()
        console.setFormatter(formatter)
        logger.addHandler(console)
    if log_file is not None:
        path = str(Path(log_file).resolve())
        if not any(getattr(h, "baseFilename", None) == path for h in logger.handlers):
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(path)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)
    return logger


class MetricsWriter:
    """Appends one JSON object per line. Keys are sorted and floats are written with
    `repr` precision, so two identical runs produce byte-identical files.

    Args:
        path (Path or str, optional): destination file. When None, records are only kept in memory.
    """

    def __init__(self, path: tp.Optional[tp.Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict[str, tp.Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, **record: tp.Any) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def losses(self, phase: tp.Optional[str] = None) -> list[float]:
        return [
            r["loss"] for r in self.records
            if "loss" in r and (phase is None or r.get("phase") == phase)
        ]
