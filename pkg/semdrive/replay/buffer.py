"""
Multi-source replay: common, out-lane and collision buckets sampled in turn
"""

import logging
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Union

import numpy as np

from ..env.simulator import Termination
from ..utils.config import ReplayConfig
from ..utils.errors import ArgumentError, EmptyBufferError
from .storage import Episode, TransitionRecord, save_episode

logger = logging.getLogger(__name__)


class BucketKind(str, Enum):
    COMMON = "common"
    OUT_LANE = "out_lane"
    COLLISION = "collision"


BUCKET_ORDER = (BucketKind.COMMON, BucketKind.OUT_LANE, BucketKind.COLLISION)

CORNER_BUCKETS = {
    Termination.OUT_LANE: BucketKind.OUT_LANE,
    Termination.COLLISION: BucketKind.COLLISION,
}


@dataclass
class SequenceBatch:
    """B sequences of L contiguous steps, each from a single episode"""

    observations: np.ndarray  # (B, L, H, W, 3) uint8
    masks: np.ndarray  # (B, L, H, W, 3) uint8
    actions: np.ndarray  # (B, L, 2), a_{t-1} paired with o_t
    rewards: np.ndarray  # (B, L)
    terminations: np.ndarray  # (B, L) termination codes
    episode_ids: np.ndarray  # (B,)
    step_indices: np.ndarray  # (B, L)
    sources: List[BucketKind]

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0]

    @property
    def length(self) -> int:
        return self.observations.shape[1]


class MultiSourceBuffer:
    """
    Three FIFO episode buckets with per-bucket capacities in transitions

    Every episode goes to the common bucket; an episode ending out-lane or in a
    collision additionally contributes a copy of its last 2 x L steps to the
    matching corner bucket. add_episode and sample_batch are atomic with respect
    to each other.
    """

    def __init__(
        self,
        capacities: Dict[BucketKind, int],
        sequence_length: int,
        multisource: bool = True,
        spill_dir: Optional[Union[str, Path]] = None,
        seed: int = 0,
    ):
        if sequence_length < 1:
            raise ArgumentError(f"sequence_length must be >= 1, got {sequence_length}")
        self.capacities = {kind: int(capacities[kind]) for kind in BUCKET_ORDER}
        if any(c < 1 for c in self.capacities.values()):
            raise ArgumentError(f"Bucket capacities must be >= 1: {self.capacities}")
        self.sequence_length = sequence_length
        self.multisource = multisource
        self.spill_dir = Path(spill_dir) if spill_dir else None

        self._buckets: Dict[BucketKind, Deque[Episode]] = {kind: deque() for kind in BUCKET_ORDER}
        self._transitions: Dict[BucketKind, int] = {kind: 0 for kind in BUCKET_ORDER}
        self._cursor = 0
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, config: ReplayConfig, multisource: bool = True, seed: int = 0) -> "MultiSourceBuffer":
        return cls(
            capacities={
                BucketKind.COMMON: config.common_capacity,
                BucketKind.OUT_LANE: config.out_lane_capacity,
                BucketKind.COLLISION: config.collision_capacity,
            },
            sequence_length=config.sequence_length,
            multisource=multisource,
            spill_dir=config.spill_dir,
            seed=seed,
        )

    def _insert(self, kind: BucketKind, episode: Episode) -> None:
        capacity = self.capacities[kind]
        if len(episode) > capacity:
            episode = episode.tail(capacity)
        bucket = self._buckets[kind]
        bucket.append(episode)
        self._transitions[kind] += len(episode)
        while self._transitions[kind] > capacity:
            evicted = bucket.popleft()
            self._transitions[kind] -= len(evicted)
            logger.debug(f"Evicted episode {evicted.episode_id} from {kind.value}")

    def add_episode(self, episode: Union[Episode, Sequence[TransitionRecord]]) -> None:
        """
        Store an episode in the common bucket and its corner tail in the matching corner bucket

        Raises:
            ArgumentError: If the episode is malformed
        """
        if not isinstance(episode, Episode):
            episode = Episode.from_records(list(episode))

        corner = CORNER_BUCKETS.get(episode.termination) if self.multisource else None
        with self._lock:
            self._insert(BucketKind.COMMON, episode)
            if corner is not None:
                self._insert(corner, episode.tail(2 * self.sequence_length))

        if self.spill_dir is not None:
            try:
                save_episode(self.spill_dir / f"episode_{episode.episode_id:06d}.joblib", episode)
            except OSError as e:
                logger.warning(f"Failed to spill episode {episode.episode_id}: {e}")

    def _samplable(self, kind: BucketKind, length: int) -> List[Episode]:
        return [ep for ep in self._buckets[kind] if len(ep) >= length]

    def is_samplable(self, length: Optional[int] = None) -> bool:
        length = length or self.sequence_length
        with self._lock:
            return any(self._samplable(kind, length) for kind in BUCKET_ORDER)

    def sample_batch(
        self,
        batch_size: int,
        length: Optional[int] = None,
        rng_seed: Union[int, np.random.Generator, None] = None,
    ) -> SequenceBatch:
        """
        Draw B sequences, assigning slots to buckets in turn

        Buckets that cannot supply a length-L window are skipped; the cursor persists
        across calls. Within a bucket the episode and the start index are uniform.

        Args:
            batch_size: Number of sequences B
            length: Sequence length L (defaults to the configured length)
            rng_seed: Seed or generator; the buffer's own generator when omitted

        Raises:
            EmptyBufferError: If no bucket holds an episode of at least L steps
        """
        length = length or self.sequence_length
        if batch_size < 1 or length < 1:
            raise ArgumentError(f"batch_size and length must be >= 1, got {batch_size}, {length}")
        if isinstance(rng_seed, np.random.Generator):
            rng = rng_seed
        elif rng_seed is not None:
            rng = np.random.default_rng(rng_seed)
        else:
            rng = self._rng

        with self._lock:
            eligible = {kind: self._samplable(kind, length) for kind in BUCKET_ORDER}
            if not any(eligible.values()):
                raise EmptyBufferError(f"No bucket holds an episode of at least {length} steps")

            windows = []
            sources = []
            for _ in range(batch_size):
                for offset in range(len(BUCKET_ORDER)):
                    index = (self._cursor + offset) % len(BUCKET_ORDER)
                    if eligible[BUCKET_ORDER[index]]:
                        break
                kind = BUCKET_ORDER[index]
                self._cursor = (index + 1) % len(BUCKET_ORDER)

                candidates = eligible[kind]
                episode = candidates[int(rng.integers(len(candidates)))]
                start = int(rng.integers(len(episode) - length + 1))
                windows.append((episode, start))
                sources.append(kind)

        def stack(name: str) -> np.ndarray:
            return np.stack([getattr(ep, name)[s:s + length] for ep, s in windows])

        return SequenceBatch(
            observations=stack("observations"),
            masks=stack("masks"),
            actions=stack("actions"),
            rewards=stack("rewards"),
            terminations=stack("terminations"),
            episode_ids=np.asarray([ep.episode_id for ep, _ in windows], dtype=np.int64),
            step_indices=stack("step_indices"),
            sources=sources,
        )

    def stats(self) -> Dict[str, Dict[str, int]]:
        """Episodes and transitions per bucket"""
        with self._lock:
            return {
                kind.value: {"episodes": len(self._buckets[kind]), "transitions": self._transitions[kind]}
                for kind in BUCKET_ORDER
            }

    def episodes(self, kind: BucketKind) -> List[Episode]:
        with self._lock:
            return list(self._buckets[kind])
