"""
Line-delimited JSON metrics stream
"""

import json
import logging
import math
import threading
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from ..utils.errors import ArgumentError, ConfigurationError

logger = logging.getLogger(__name__)

RECORD_KINDS = ("train", "episode", "eval")


def _clean(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _last_global_step(path: Path) -> int:
    """global_step of the last record in an existing stream, -1 when there is none"""
    if not path.exists():
        return -1
    last = -1
    with path.open(encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                last = int(json.loads(line)["global_step"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ConfigurationError(f"{path}:{number}: cannot append to a corrupt metrics stream: {e}") from e
    return last


class MetricsWriter:
    """
    Append-only metrics file, one JSON object per line

    Keys are sorted and no wall-clock values are written, so identical runs produce
    identical files. global_step must never decrease, also across writers appending
    to the same file.

    Args:
        path: Metrics file
        overwrite: Start a fresh stream instead of appending to an existing one
    """

    def __init__(self, path: Union[str, Path], overwrite: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_step = -1 if overwrite else _last_global_step(self.path)
        self._count = 0
        self._lock = threading.Lock()
        self._file = self.path.open("w" if overwrite else "a", encoding="utf-8")

    def write(self, kind: str, global_step: int, **fields: Any) -> None:
        if kind not in RECORD_KINDS:
            raise ArgumentError(f"Unknown metrics kind '{kind}'")
        with self._lock:
            if global_step < self._last_step:
                raise ArgumentError(f"global_step went backwards: {global_step} < {self._last_step}")
            record = _clean({"kind": kind, "global_step": int(global_step), **fields})
            self._file.write(json.dumps(record, sort_keys=True) + "\n")
            self._file.flush()
            self._last_step = global_step
            self._count += 1

    @property
    def count(self) -> int:
        return self._count

    def close(self) -> None:
        with self._lock:
            if not self._file.closed:
                self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: Union[str, Path], kind: Optional[str] = None) -> pd.DataFrame:
    """Load a metrics file into a DataFrame, optionally keeping one record kind"""
    source = Path(path)
    if not source.exists():
        raise ConfigurationError(f"Metrics file not found: {source}")
    rows = []
    with source.open(encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{source}:{number}: invalid metrics record: {e}") from e
    frame = pd.DataFrame(rows)
    if kind is not None:
        if frame.empty or "kind" not in frame:
            return pd.DataFrame()
        frame = frame[frame["kind"] == kind].reset_index(drop=True)
    return frame


def flatten_stats(stats: Dict[str, Dict[str, int]]) -> Dict[str, int]:
    """Buffer stats as flat metrics fields, e.g. buffer_common_transitions"""
    return {
        f"buffer_{bucket}_{name}": count
        for bucket, counts in stats.items()
        for name, count in counts.items()
    }
