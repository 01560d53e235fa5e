"""
Flat-file outputs of a run and the manifest that makes them reproducible.

Every file a command writes goes through RunArtifacts so the manifest lists it.
No wall-clock time is recorded: rerunning a manifest's config gives
byte-identical files.
"""

from __future__ import annotations

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig

MANIFEST_FILE = "manifest.json"


def to_jsonable(obj: Any) -> Any:
    """numpy scalars/arrays, enums and paths to JSON types; non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return obj.as_posix()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(obj: Any, target: Path) -> Path:
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="\n") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return target


def write_csv(df: pd.DataFrame, target: Path) -> Path:
    target.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(target, index=False, lineterminator="\n", encoding="utf-8")
    return target


class RunArtifacts:
    """Collects the files of one run under its output directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = config.output_dir
        self.outputs: List[str] = []

    def _target(self, name: str) -> Path:
        if name not in self.outputs:
            self.outputs.append(name)
        return self.root / name

    def csv(self, name: str, df: pd.DataFrame) -> Path:
        return write_csv(df, self._target(name))

    def json(self, name: str, obj: Any) -> Path:
        return write_json(obj, self._target(name))

    def register(self, name: str) -> Path:
        """Records a file written by another writer (e.g. a PathSeries JSON)."""
        return self._target(name)

    def manifest(self, partial: bool = False, extra: Optional[Dict[str, Any]] = None) -> Path:
        """
        Summary:
            Writes manifest.json: tool, version, command, seed, config hash,
            resolved config, sorted outputs, partial flag and any extra counts.
        """
        body: Dict[str, Any] = {
            "tool": "brownex",
            "version": __version__,
            "command": self.config.command,
            "seed": self.config.seed,
            "config_hash": self.config.config_hash,
            "config": self.config.options,
            "outputs": sorted(self.outputs),
            "partial": bool(partial),
        }
        if extra:
            body.update(extra)
        return write_json(body, self.root / MANIFEST_FILE)
