"""Run logging on top of the stable-baselines3 logger.

Campaigns and explorations record key/value metrics with ``record`` + ``dump``
and human-readable messages with ``info``/``warn``. A run folder gets
stdout, csv and (optionally) tensorboard outputs. Library calls without a
run logger only emit warnings, to stderr.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

from stable_baselines3.common.logger import WARN, HumanOutputFormat, Logger, configure

DEFAULT_FORMATS = ("stdout", "csv")

_default_logger: Logger | None = None


def next_run_id(root: str | Path = "logs") -> str:
    """Return ``run_XX`` where ``XX`` is one higher than existing log folders."""
    logs = Path(root)
    logs.mkdir(parents=True, exist_ok=True)
    numbers = []
    for d in logs.iterdir():
        m = re.match(r"run_(\d+)", d.name)
        if m:
            numbers.append(int(m.group(1)))
    return f"run_{max(numbers, default=0) + 1:02d}"


def configure_run_logger(
    root: str | Path = "logs",
    formats: tuple[str, ...] = DEFAULT_FORMATS,
    tensorboard: bool = False,
) -> Logger:
    """Create ``root/run_XX`` and a logger writing ``formats`` into it."""
    folder = Path(root) / next_run_id(root)
    format_strings = list(formats) + (["tensorboard"] if tensorboard else [])
    return configure(folder=str(folder), format_strings=format_strings)


def get_logger() -> Logger:
    global _default_logger
    if _default_logger is None:
        _default_logger = Logger(folder=None, output_formats=[HumanOutputFormat(sys.stderr)])
        _default_logger.set_level(WARN)
    return _default_logger
