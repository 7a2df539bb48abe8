"""Run manifests: what produced the artifacts of an output directory."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .artifacts import read_json, write_json

MANIFEST_NAME = "manifest.json"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def config_hash(payload: Any) -> str:
    """sha256 of the canonical (sorted, compact) JSON form of ``payload``."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    tool_version: str
    command: str
    config_hash: str
    master_seed: int | None
    started_at: str
    finished_at: str = ""
    outputs: list[str] = field(default_factory=list)
    config: Any = None

    def verify(self) -> bool:
        return self.config is not None and config_hash(self.config) == self.config_hash


def write_manifest(manifest: RunManifest, out_dir: str | os.PathLike) -> Path:
    return write_json(Path(out_dir) / MANIFEST_NAME, asdict(manifest))


def read_manifest(out_dir: str | os.PathLike) -> RunManifest:
    return RunManifest(**read_json(Path(out_dir) / MANIFEST_NAME))
