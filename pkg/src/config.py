"""
Experiment configuration: defaults, file loading and validation
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from benchmarks import WEIGHT_MODES
from mesh import DOMAINS

logger = logging.getLogger(__name__)

SOLVER_PATHS = ("spd", "saddle", "both")
MAX_DEGREE = 3
THREADS_VARIABLE = "DLSFEM_THREADS"


class ConfigError(ValueError):
    """Raised for unknown keys and out-of-range values."""


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Parameters of one adaptive experiment.

    Attributes:
        domain: square, rectangle or lshape
        ell: length scale (positive integer for the rectangle)
        k: Raviart-Thomas degree 0..3
        alpha: +1 natural penalty, -1 over-penalization
        weight: weight mode of c_Omega
        theta: Doerfler bulk parameter, 1 means uniform refinement
        max_ndof: dof budget of the adaptive loop
        solver: spd, saddle or both (alpha = +1 only for the latter two)
        output: CSV path, None for a name derived from the parameters
        seed: seed of randomized checks
        max_levels: optional limit of solved levels
        workers: threads for assembly, processes for sweeps
        iterative: conjugate gradients instead of the direct spd solver
    """
    domain: str = "square"
    ell: float = 1.0
    k: int = 0
    alpha: int = 1
    weight: str = "friedrichs"
    theta: float = 0.5
    max_ndof: int = 200000
    solver: str = "spd"
    output: Optional[str] = None
    seed: int = 0
    max_levels: Optional[int] = None
    workers: int = 1
    iterative: bool = False

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_updates(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def validate(config: ExperimentConfig) -> None:
    """Check every field range, naming the offending field in the message."""
    if config.domain not in DOMAINS:
        raise ConfigError(f"domain must be one of {', '.join(DOMAINS)}, got {config.domain!r}")
    if not (config.ell > 0 and math.isfinite(config.ell)):
        raise ConfigError(f"ell must be positive and finite, got {config.ell!r}")
    if config.domain == "rectangle" and float(config.ell) != int(config.ell):
        raise ConfigError(f"ell must be a positive integer for the rectangle, got {config.ell!r}")
    if not 0 <= config.k <= MAX_DEGREE:
        raise ConfigError(f"k must lie in 0..{MAX_DEGREE}, got {config.k!r}")
    if config.alpha not in (-1, 1):
        raise ConfigError(f"alpha must be -1 or +1, got {config.alpha!r}")
    if config.weight not in WEIGHT_MODES:
        raise ConfigError(f"weight must be one of {', '.join(WEIGHT_MODES)}, got {config.weight!r}")
    if not 0 < config.theta <= 1:
        raise ConfigError("theta must lie in (0, 1]")
    if config.max_ndof <= 0:
        raise ConfigError(f"max_ndof must be a positive integer, got {config.max_ndof!r}")
    if config.solver not in SOLVER_PATHS:
        raise ConfigError(f"solver must be one of {', '.join(SOLVER_PATHS)}, got {config.solver!r}")
    if config.alpha == -1 and config.solver != "spd":
        raise ConfigError(f"solver {config.solver!r} needs the constraint block, "
                          f"which the over-penalized scheme (alpha=-1) does not have")
    if config.max_levels is not None and config.max_levels < 1:
        raise ConfigError(f"max_levels must be at least 1, got {config.max_levels!r}")
    if config.workers < 1:
        raise ConfigError(f"workers must be at least 1, got {config.workers!r}")


DEFAULT_CONFIG = asdict(ExperimentConfig())
CONFIG_KEYS = tuple(f.name for f in fields(ExperimentConfig))


def _coerce(key: str, value: Any) -> Any:
    """Convert a raw (string or JSON) value to the field's type."""
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        if key in ("output", "max_levels"):
            return None
        raise ConfigError(f"{key} must not be empty")
    try:
        if key in ("k", "alpha", "max_ndof", "seed", "max_levels", "workers"):
            number = float(value)
            if number != int(number):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            return int(number)
        if key in ("ell", "theta"):
            return float(value)
        if key == "iterative":
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ConfigError(f"iterative must be a boolean, got {value!r}")
                return lowered in ("true", "1", "yes")
            return bool(value)
    except (TypeError, ValueError, OverflowError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{key} has an invalid value {value!r}") from e
    return str(value).strip()


def config_from_mapping(values: Mapping[str, Any], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """
    Build a config from a mapping, on top of `base` (defaults when None).

    Raises:
        ConfigError: for unknown keys or invalid values
    """
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    merged = asdict(base) if base is not None else dict(DEFAULT_CONFIG)
    merged.update({key: _coerce(key, value) for key, value in values.items()})
    return ExperimentConfig(**merged)


def _parse_key_value(text: str, path: Path) -> Dict[str, str]:
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_config_file(path: Union[str, Path], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """
    Load an experiment configuration.

    Files ending in .json hold a JSON object like config-example.json; any
    other file is read as flat key=value lines with # comments.

    Args:
        path: configuration file
        base: values the file is layered on, defaults when None

    Returns:
        Validated ExperimentConfig
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read configuration file {path}: {e}") from e
    if path.suffix.lower() == ".json":
        try:
            values = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    else:
        values = _parse_key_value(text, path)
    logger.debug("loaded %d configuration keys from %s", len(values), path)
    return config_from_mapping(values, base)


def thread_cap(requested: int) -> int:
    """Cap a worker count by the DLSFEM_THREADS environment variable."""
    raw = os.environ.get(THREADS_VARIABLE)
    if not raw:
        return requested
    try:
        cap = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_VARIABLE} must be a positive integer, got {raw!r}") from e
    if cap < 1:
        raise ConfigError(f"{THREADS_VARIABLE} must be a positive integer, got {raw!r}")
    if requested > cap:
        logger.info("worker count %d capped to %d by %s", requested, cap, THREADS_VARIABLE)
    return min(requested, cap)
