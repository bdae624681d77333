"""
Versioned checkpoint container: config echo, parameter arrays, optimizer state and counters
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import joblib
import numpy as np
from pydantic import ValidationError

from ..utils.config import RunConfig
from ..utils.errors import CheckpointMismatchError, ConfigurationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """In-memory form of a checkpoint file"""

    config: Dict[str, Any]
    fingerprint: Dict[str, Any]
    weights: Dict[str, Any]
    optimizers: Dict[str, List[np.ndarray]]
    global_step: int = 0
    best_return: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def run_config(self) -> RunConfig:
        """Rebuild the RunConfig stored with the checkpoint (environment variables are not consulted)"""
        try:
            return RunConfig.model_validate(self.config)
        except ValidationError as e:
            raise ConfigurationError(f"Checkpoint carries an invalid configuration: {e}") from e

    def components(self) -> List[str]:
        """Names of all parameter groups, world-model components prefixed with 'world_model/'"""
        names = []
        for group, value in self.weights.items():
            if isinstance(value, dict):
                names.extend(f"{group}/{name}" for name in value)
            else:
                names.append(group)
        return sorted(names)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """
    Write a checkpoint atomically (temporary file, then rename)

    Returns:
        The written path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": checkpoint.format_version,
        "config": checkpoint.config,
        "fingerprint": checkpoint.fingerprint,
        "weights": checkpoint.weights,
        "optimizers": checkpoint.optimizers,
        "global_step": int(checkpoint.global_step),
        "best_return": checkpoint.best_return,
        "extra": checkpoint.extra,
    }
    tmp = target.with_name(target.name + ".tmp")
    joblib.dump(payload, tmp)
    tmp.replace(target)
    logger.info(f"Checkpoint written: {target} (step {checkpoint.global_step})")
    return target


def load_checkpoint(path: Union[str, Path], expected: Optional[RunConfig] = None) -> Checkpoint:
    """
    Read a checkpoint file

    Args:
        path: Checkpoint file
        expected: When given, the checkpoint's architecture must match this configuration

    Raises:
        ConfigurationError: If the file is missing, unreadable or of an unknown format
        CheckpointMismatchError: If the architecture differs from `expected`
    """
    source = Path(path)
    if not source.exists():
        raise ConfigurationError(f"Checkpoint not found: {source}")
    try:
        payload = joblib.load(source)
    except Exception as e:
        raise ConfigurationError(f"Cannot read checkpoint {source}: {e}") from e

    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported checkpoint format in {source}")

    checkpoint = Checkpoint(
        config=payload["config"],
        fingerprint=payload["fingerprint"],
        weights=payload["weights"],
        optimizers=payload["optimizers"],
        global_step=payload["global_step"],
        best_return=payload["best_return"],
        extra=payload.get("extra", {}),
    )
    if expected is not None:
        check_compatible(checkpoint, expected)
    return checkpoint


def check_compatible(checkpoint: Checkpoint, config: RunConfig) -> None:
    """Raise CheckpointMismatchError listing every architecture key that differs"""
    wanted = config.architecture_fingerprint()
    stored = checkpoint.fingerprint
    mismatched = sorted(
        key for key in set(wanted) | set(stored) if wanted.get(key) != stored.get(key)
    )
    if mismatched:
        raise CheckpointMismatchError(mismatched)
