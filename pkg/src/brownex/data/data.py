from typing import Any, Dict
from pathlib import Path
import yaml


def _load_yaml(filename: str) -> Any:
    """
    Load a YAML file located next to this module.
    Args:
                    filename: Relative filename (in the same directory as this module).
    Returns:
                    The Python object produced by yaml.safe_load() for the file contents.
    Raises:
                    FileNotFoundError: If the target file does not exist.
                    yaml.YAMLError: If the file exists but cannot be parsed as valid YAML.
    """

    filepath = Path(__file__).parent / filename
    if not filepath.exists():
        raise FileNotFoundError(f"Data file not found: {filepath}")
    with open(filepath, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def _require_number(section: str, key: str, value: Any, *, positive: bool = False,
                    non_negative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"'{section}.{key}' must be a number, got {value!r}")
    if positive and value <= 0:
        raise ValueError(f"'{section}.{key}' must be > 0, got {value}")
    if non_negative and value < 0:
        raise ValueError(f"'{section}.{key}' must be >= 0, got {value}")
    return float(value)


def _validate_defaults(data: Dict[str, Any]) -> None:
    """
    Validate the structural contract of defaults.yaml.
    Raises:
                    ValueError: If any section or value is missing or out of range.
    """

    if not isinstance(data, dict):
        raise ValueError("defaults.yaml must be a mapping of section -> settings")

    for section in ("session", "tape", "test", "execution", "estimation"):
        if not isinstance(data.get(section), dict):
            raise ValueError(f"defaults.yaml is missing the '{section}' section")

    session = data["session"]
    _require_number("session", "length", session.get("length"), positive=True)
    _require_number("session", "min_rate", session.get("min_rate"), non_negative=True)

    columns = data["tape"].get("columns")
    required = {"timestamp", "symbol", "price", "size", "buyer", "seller"}
    if not isinstance(columns, dict) or set(columns) != required:
        raise ValueError(f"'tape.columns' must map exactly {sorted(required)}")
    if not all(isinstance(c, str) and c for c in columns.values()):
        raise ValueError("'tape.columns' values must be non-empty strings")

    test = data["test"]
    _require_number("test", "sigma_prime", test.get("sigma_prime"), positive=True)
    _require_number("test", "gamma", test.get("gamma"), positive=True)
    level = _require_number("test", "alpha_level", test.get("alpha_level"))
    if not 0.0 < level < 1.0:
        raise ValueError(f"'test.alpha_level' must lie in (0, 1), got {level}")
    if test.get("eta_estimator") not in ("sample_variance", "bipower"):
        raise ValueError(
            f"'test.eta_estimator' must be 'sample_variance' or 'bipower', got {test.get('eta_estimator')!r}"
        )
    _require_number("test", "bin_seconds", test.get("bin_seconds"), positive=True)
    if not isinstance(test.get("seed"), int) or test["seed"] < 0:
        raise ValueError("'test.seed' must be a non-negative integer")

    execution = data["execution"]
    _require_number("execution", "terminal_penalty", execution.get("terminal_penalty"), non_negative=True)
    _require_number("execution", "running_penalty", execution.get("running_penalty"), non_negative=True)
    _require_number("execution", "q_target", execution.get("q_target"))
    if not isinstance(execution.get("n_sim"), int) or execution["n_sim"] < 1:
        raise ValueError("'execution.n_sim' must be a positive integer")
    band = execution.get("band")
    if not isinstance(band, list) or len(band) != 2 or not 0 <= band[0] < band[1] <= 100:
        raise ValueError(f"'execution.band' must be [lo, hi] with 0 <= lo < hi <= 100, got {band!r}")

    estimation = data["estimation"]
    _require_number("estimation", "permanent_coefficient", estimation.get("permanent_coefficient"), positive=True)
    _require_number("estimation", "temporary_coefficient", estimation.get("temporary_coefficient"), positive=True)
    _require_number("estimation", "bin_seconds", estimation.get("bin_seconds"), positive=True)
    if not isinstance(estimation.get("history_days"), int) or estimation["history_days"] < 1:
        raise ValueError("'estimation.history_days' must be a positive integer")


DEFAULTS: Dict[str, Any] = _load_yaml("defaults.yaml")
_validate_defaults(DEFAULTS)

SESSION_LENGTH: float = float(DEFAULTS["session"]["length"])
MIN_RATE: float = float(DEFAULTS["session"]["min_rate"])
TAPE_COLUMNS: Dict[str, str] = dict(DEFAULTS["tape"]["columns"])
TAPE_DELIMITER: str = str(DEFAULTS["tape"].get("delimiter", ","))
TEST_DEFAULTS: Dict[str, Any] = dict(DEFAULTS["test"])
EXECUTION_DEFAULTS: Dict[str, Any] = dict(DEFAULTS["execution"])
ESTIMATION_DEFAULTS: Dict[str, Any] = dict(DEFAULTS["estimation"])

TERMINAL_PENALTY: float = float(EXECUTION_DEFAULTS["terminal_penalty"])
RUNNING_PENALTY: float = float(EXECUTION_DEFAULTS["running_penalty"])
PERMANENT_COEFFICIENT: float = float(ESTIMATION_DEFAULTS["permanent_coefficient"])
TEMPORARY_COEFFICIENT: float = float(ESTIMATION_DEFAULTS["temporary_coefficient"])
