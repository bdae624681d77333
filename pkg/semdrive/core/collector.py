"""
Episode collection: one simulator, its running latent state and its random stream
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ..env.rendering import Weather
from ..env.simulator import DrivingSimulator, StepResult, Termination
from ..env.vehicle import ACTION_BOUNDS
from ..models.rssm import LatentState
from ..replay.storage import Episode, TransitionRecord
from .agent import Agent

logger = logging.getLogger(__name__)

SEED_HIGH = 2 ** 31 - 1


@dataclass(frozen=True)
class EpisodeSummary:
    episode_id: int
    seed: int
    layout: str
    weather: str
    length: int
    episode_return: float
    termination: str


class Collector:
    """
    Drives one simulator with the agent's policy (or uniformly random actions)

    All randomness of the collector comes from its own generator, so two collectors
    built with the same seed produce the same episodes.
    """

    def __init__(
        self,
        env: DrivingSimulator,
        agent: Agent,
        seed: Union[int, Sequence[int]],
        layout_id: Optional[str] = None,
        weather: Optional[Union[Weather, str]] = None,
        frames_dir: Optional[Union[str, Path]] = None,
    ):
        self.env = env
        self.agent = agent
        self.layout_id = layout_id
        self.weather = weather
        self.rng = np.random.default_rng(seed)
        self.frames_dir = Path(frames_dir) if frames_dir else None

        self._records: List[TransitionRecord] = []
        self._last: Optional[StepResult] = None
        self._state: Optional[LatentState] = None
        self._prev_action = np.zeros(2, dtype=np.float32)
        self._episode_id = -1
        self._episode_seed = -1

    @property
    def active(self) -> bool:
        return self._last is not None and not self._last.done

    def begin(self, episode_id: int, episode_seed: Optional[int] = None) -> None:
        if episode_seed is None:
            episode_seed = int(self.rng.integers(SEED_HIGH))
        self._episode_id = episode_id
        self._episode_seed = episode_seed
        self._last = self.env.reset(episode_seed, self.layout_id, self.weather)
        self._state = self.agent.initial_state(1)
        self._prev_action = np.zeros(2, dtype=np.float32)
        self._records = [self._record(self._last, self._prev_action)]
        self._dump_frame()

    def _record(self, result: StepResult, action: np.ndarray) -> TransitionRecord:
        return TransitionRecord(
            observation=result.observation,
            mask=result.mask,
            action=np.asarray(action, dtype=np.float32),
            reward=result.reward,
            termination=result.termination,
            episode_id=self._episode_id,
            step_index=self.env.step_index,
        )

    def _dump_frame(self) -> None:
        if self.frames_dir is not None:
            self.env.save_frames(self.frames_dir)

    def _choose_action(self, random_policy: bool, greedy: bool, expl_std: float) -> np.ndarray:
        if random_policy:
            return self.rng.uniform(-ACTION_BOUNDS, ACTION_BOUNDS).astype(np.float32)
        seed = self.rng.integers(SEED_HIGH, size=2)
        self._state, features = self.agent.observe(self._state, self._prev_action, self._last.observation, seed)
        return self.agent.act(features, greedy=greedy, rng=self.rng, expl_std=expl_std)[0]

    def step(self, random_policy: bool = False, greedy: bool = False, expl_std: float = 0.0) -> Optional[Episode]:
        """
        Advance the current episode by one step

        Returns:
            The finished Episode when this step terminated it, otherwise None
        """
        action = self._choose_action(random_policy, greedy, expl_std)
        self._last = self.env.step(action)
        self._prev_action = np.clip(action, -ACTION_BOUNDS, ACTION_BOUNDS).astype(np.float32)
        self._records.append(self._record(self._last, self._prev_action))
        self._dump_frame()
        if not self._last.done:
            return None

        episode = Episode.from_records(
            self._records,
            layout=self.env.layout.layout_id,
            seed=self._episode_seed,
            weather=self.env.weather.name,
        )
        self._records = []
        if self.frames_dir is not None:
            logger.info(f"Frames of episode {self._episode_id} written to {self.frames_dir}")
            self.frames_dir = None
        return episode

    def run_episode(self, episode_id: int, episode_seed: int, greedy: bool = True, expl_std: float = 0.0) -> Episode:
        self.begin(episode_id, episode_seed)
        while True:
            episode = self.step(greedy=greedy, expl_std=expl_std)
            if episode is not None:
                return episode


def summarize(episode: Episode) -> EpisodeSummary:
    return EpisodeSummary(
        episode_id=int(episode.episode_id),
        seed=int(episode.seed),
        layout=episode.layout,
        weather=episode.weather,
        length=len(episode) - 1,
        episode_return=float(np.sum(episode.rewards, dtype=np.float64)),
        termination=Termination(episode.termination).value,
    )
