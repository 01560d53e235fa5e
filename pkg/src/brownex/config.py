"""
Run configuration: shipped defaults < --config file < command-line flags.

Keys everywhere are the argparse destination names (sigma_prime, n_sim, ...).
A config file may hold them at top level and/or in a section named after the
command (e.g. [simulate] in TOML); the section wins over the top level.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from .data.data import (
    ESTIMATION_DEFAULTS,
    EXECUTION_DEFAULTS,
    MIN_RATE,
    SESSION_LENGTH,
    TAPE_COLUMNS,
    TAPE_DELIMITER,
    TEST_DEFAULTS,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

COMMANDS = ("test-regular", "test-async", "sweep", "batch", "estimate", "simulate", "paths")

_COMMON = {"seed": int(TEST_DEFAULTS["seed"]), "workers": 1, "output_dir": "output"}

_INPUT = {
    "tape": None,
    "trader": None,
    "symbol": None,
    "path": None,
    "process": "inventory",
    "wealth_convention": "payment_sum",
    "session_length": SESSION_LENGTH,
    "session_open": None,
    "columns": dict(TAPE_COLUMNS),
    "delimiter": TAPE_DELIMITER,
    "q0": 0.0,
}

_TEST = {
    "sigma_prime": float(TEST_DEFAULTS["sigma_prime"]),
    "gamma": float(TEST_DEFAULTS["gamma"]),
    "alpha_level": float(TEST_DEFAULTS["alpha_level"]),
    "eta_estimator": str(TEST_DEFAULTS["eta_estimator"]),
    "eta": None,
    "bin_seconds": float(TEST_DEFAULTS["bin_seconds"]),
    "async_truncate": bool(TEST_DEFAULTS.get("async_truncate", False)),
}

_MODEL = {
    "terminal_penalty": float(EXECUTION_DEFAULTS["terminal_penalty"]),
    "running_penalty": float(EXECUTION_DEFAULTS["running_penalty"]),
    "q_target": float(EXECUTION_DEFAULTS["q_target"]),
}

COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "test-regular": {**_COMMON, **_INPUT, **_TEST},
    "test-async": {**_COMMON, **_INPUT, **_TEST},
    "sweep": {**_COMMON, **_INPUT, **_TEST, "sigma_grid": None, "gamma_grid": None},
    "batch": {
        **_COMMON, **_TEST,
        **{k: _INPUT[k] for k in ("process", "wealth_convention", "session_length",
                                  "session_open", "columns", "delimiter")},
        "tapes": None, "traders": None, "symbols": None, "mode": "regular",
        "min_rate": MIN_RATE,
    },
    "estimate": {
        **_COMMON, **_INPUT, **_MODEL,
        "spread": None,
        "history": None,
        "per_sqrt_second": False,
        "estimation_bin_seconds": float(ESTIMATION_DEFAULTS["bin_seconds"]),
        "history_days": int(ESTIMATION_DEFAULTS["history_days"]),
    },
    # Model keys stay None so a --params file is only overridden by explicit values.
    "simulate": {
        **_COMMON, **_INPUT,
        **{k: None for k in _MODEL},
        "q0": None,
        "grid": None,
        "params": None,
        "approach": 1,
        "n_sim": int(EXECUTION_DEFAULTS["n_sim"]),
        "band": [float(b) for b in EXECUTION_DEFAULTS["band"]],
        "scenario_samples": int(EXECUTION_DEFAULTS["scenario_samples"]),
        "q0_from_terminal": False,
        "alpha_perm": None,
        "kappa_temp": None,
        "sigma_price": None,
        "sigma_inv": None,
    },
    "paths": {**_COMMON, **_INPUT, "x0": 0.0},
}


def load_config_file(path: Path | str) -> Dict[str, Any]:
    """
    Summary:
        Reads a YAML, JSON or TOML config file. A run manifest is accepted too;
        its "config" block is returned.

    Args:
        path: The file.

    Returns:
        The raw mapping.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the suffix is unknown or the content is not a mapping.
    """
    filepath = Path(path)
    if not filepath.exists():
        raise FileNotFoundError(f"Config file not found: {filepath}")
    suffix = filepath.suffix.lower()
    if suffix in (".yaml", ".yml"):
        with filepath.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    elif suffix == ".json":
        with filepath.open("r", encoding="utf-8") as f:
            data = json.load(f)
        if isinstance(data, dict) and "config" in data and "config_hash" in data:
            data = data["config"]
    elif suffix == ".toml":
        with filepath.open("rb") as f:
            data = tomllib.load(f)
    else:
        raise ValueError(f"Unsupported config format '{suffix}' (use .yaml, .json or .toml)")
    if not isinstance(data, dict):
        raise ValueError(f"Config file {filepath} must hold a mapping")
    return data


def _normalise(key: str) -> str:
    return key.replace("-", "_")


def _file_layer(command: str, data: Mapping[str, Any]) -> Dict[str, Any]:
    section_names = {command, _normalise(command)}
    top = {_normalise(k): v for k, v in data.items()
           if not isinstance(v, dict) or _normalise(k) == "columns"}
    for name in section_names:
        section = data.get(name)
        if isinstance(section, dict):
            top.update({_normalise(k): v for k, v in section.items()})
    return top


def resolve_options(command: str, file_options: Optional[Mapping[str, Any]] = None,
                    flag_options: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Merges the three layers. Unknown keys in a file raise; None flags are ignored."""
    if command not in COMMAND_DEFAULTS:
        raise ValueError(f"Unknown command {command!r}; expected one of {COMMANDS}")
    options = json.loads(json.dumps(COMMAND_DEFAULTS[command]))
    layer = _file_layer(command, file_options or {})
    unknown = sorted(k for k in layer if k not in options)
    if unknown:
        raise ValueError(f"Unknown config keys for '{command}': {unknown}")
    options.update({k: v for k, v in layer.items() if k in options})
    options.update({k: v for k, v in (flag_options or {}).items() if v is not None and k in options})
    return options


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved invocation."""

    command: str
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command {self.command!r}")
        if int(self.options.get("workers", 1)) < 1:
            raise ValueError("workers must be >= 1")

    @property
    def seed(self) -> int:
        return int(self.options["seed"])

    @property
    def workers(self) -> int:
        return int(self.options.get("workers", 1))

    @property
    def output_dir(self) -> Path:
        return Path(self.options["output_dir"])

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of command and options."""
        canonical = json.dumps({"command": self.command, "options": self.options},
                               sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def build(cls, command: str, config_file: Optional[Path | str] = None,
              flag_options: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        file_options = load_config_file(config_file) if config_file else {}
        return cls(command, resolve_options(command, file_options, flag_options))
