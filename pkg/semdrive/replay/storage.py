"""
Transition records, columnar episodes and the on-disk episode dump format
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import joblib
import numpy as np

from ..env.simulator import Termination
from ..utils.errors import ArgumentError, ConfigurationError

logger = logging.getLogger(__name__)

DUMP_FORMAT_VERSION = 1

TERMINATION_CODES = {
    Termination.NONE: 0,
    Termination.OUT_LANE: 1,
    Termination.COLLISION: 2,
    Termination.TIMEOUT: 3,
}
CODE_TERMINATIONS = {code: kind for kind, code in TERMINATION_CODES.items()}


@dataclass
class TransitionRecord:
    """
    One stored step

    The record of step t holds o_t and m_t, the action a_{t-1} that led to them
    (zeros at reset), the reward received on arrival (0 at reset) and the
    termination kind of step t.
    """

    observation: np.ndarray
    mask: np.ndarray
    action: np.ndarray
    reward: float
    termination: Termination
    episode_id: int
    step_index: int


@dataclass
class Episode:
    """Columnar episode: arrays share their leading (time) dimension"""

    episode_id: int
    observations: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminations: np.ndarray
    step_indices: np.ndarray
    layout: str = ""
    seed: int = -1
    weather: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        length = len(self.observations)
        if length == 0:
            raise ArgumentError("Episode must contain at least one record")
        for name in ("masks", "actions", "rewards", "terminations", "step_indices"):
            if len(getattr(self, name)) != length:
                raise ArgumentError(f"Episode {self.episode_id}: '{name}' has {len(getattr(self, name))} rows, expected {length}")
        if self.observations.shape != self.masks.shape:
            raise ArgumentError(f"Episode {self.episode_id}: observation and mask shapes differ")
        if self.actions.ndim != 2 or self.actions.shape[1] != 2:
            raise ArgumentError(f"Episode {self.episode_id}: actions must be (T, 2)")
        if length > 1 and not np.all(np.diff(self.step_indices) > 0):
            raise ArgumentError(f"Episode {self.episode_id}: step indices must strictly increase")
        if np.any(self.terminations[:-1] != TERMINATION_CODES[Termination.NONE]):
            raise ArgumentError(f"Episode {self.episode_id}: only the last record may terminate")

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def termination(self) -> Termination:
        return CODE_TERMINATIONS[int(self.terminations[-1])]

    @classmethod
    def from_records(cls, records: Sequence[TransitionRecord], **metadata: Any) -> "Episode":
        if not records:
            raise ArgumentError("Episode must contain at least one record")
        episode_ids = {r.episode_id for r in records}
        if len(episode_ids) != 1:
            raise ArgumentError(f"Records span several episodes: {sorted(episode_ids)}")
        try:
            return cls(
                episode_id=records[0].episode_id,
                observations=np.stack([np.asarray(r.observation, dtype=np.uint8) for r in records]),
                masks=np.stack([np.asarray(r.mask, dtype=np.uint8) for r in records]),
                actions=np.stack([np.asarray(r.action, dtype=np.float32).reshape(2) for r in records]),
                rewards=np.asarray([r.reward for r in records], dtype=np.float32),
                terminations=np.asarray([TERMINATION_CODES[Termination(r.termination)] for r in records], dtype=np.int8),
                step_indices=np.asarray([r.step_index for r in records], dtype=np.int64),
                **metadata,
            )
        except ValueError as e:
            raise ArgumentError(f"Malformed episode records: {e}") from e

    def records(self) -> List[TransitionRecord]:
        return [
            TransitionRecord(
                observation=self.observations[i],
                mask=self.masks[i],
                action=self.actions[i],
                reward=float(self.rewards[i]),
                termination=CODE_TERMINATIONS[int(self.terminations[i])],
                episode_id=self.episode_id,
                step_index=int(self.step_indices[i]),
            )
            for i in range(len(self))
        ]

    def tail(self, count: int) -> "Episode":
        """Copy of the last `count` records (all of them when the episode is shorter)"""
        start = max(0, len(self) - count)
        return Episode(
            episode_id=self.episode_id,
            observations=self.observations[start:].copy(),
            masks=self.masks[start:].copy(),
            actions=self.actions[start:].copy(),
            rewards=self.rewards[start:].copy(),
            terminations=self.terminations[start:].copy(),
            step_indices=self.step_indices[start:].copy(),
            layout=self.layout,
            seed=self.seed,
            weather=self.weather,
            metadata=dict(self.metadata),
        )

    def header(self) -> Dict[str, Any]:
        return {
            "episode_id": int(self.episode_id),
            "termination": self.termination.value,
            "layout": self.layout,
            "seed": int(self.seed),
            "weather": self.weather,
            "length": len(self),
            **self.metadata,
        }


def save_episode(path: Union[str, Path], episode: Episode) -> Path:
    """Dump one episode with its metadata header"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump(
        {
            "format_version": DUMP_FORMAT_VERSION,
            "header": episode.header(),
            "observations": episode.observations,
            "masks": episode.masks,
            "actions": episode.actions,
            "rewards": episode.rewards,
            "terminations": episode.terminations,
            "step_indices": episode.step_indices,
        },
        target,
    )
    return target


def load_episode(path: Union[str, Path]) -> Episode:
    """Read an episode dump written by save_episode"""
    source = Path(path)
    if not source.exists():
        raise ConfigurationError(f"Episode dump not found: {source}")
    try:
        payload = joblib.load(source)
    except Exception as e:
        raise ConfigurationError(f"Cannot read episode dump {source}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format_version") != DUMP_FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported episode dump format in {source}")

    header = dict(payload["header"])
    known = {"episode_id", "termination", "layout", "seed", "weather", "length"}
    return Episode(
        episode_id=header["episode_id"],
        observations=payload["observations"],
        masks=payload["masks"],
        actions=payload["actions"],
        rewards=payload["rewards"],
        terminations=payload["terminations"],
        step_indices=payload["step_indices"],
        layout=header.get("layout", ""),
        seed=header.get("seed", -1),
        weather=header.get("weather", ""),
        metadata={k: v for k, v in header.items() if k not in known},
    )
