"""
Training loop: environment collection alternating with world-model and behavior updates
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import tensorflow as tf

from ..env.simulator import DrivingSimulator
from ..models.checkpoint import save_checkpoint
from ..replay.buffer import MultiSourceBuffer
from ..replay.storage import Episode
from ..utils.config import RunConfig, resolve_run_dir, settings, validate_configuration
from ..utils.errors import ConfigurationError, NumericalError
from .agent import Agent
from .collector import Collector, summarize
from .evaluator import evaluate_agent
from .metrics import MetricsWriter, flatten_stats

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
EVAL_SEED_OFFSET = 1_000_000


@dataclass
class TrainResult:
    """Where a finished run left its outputs"""

    run_dir: Path
    metrics_path: Path
    final_checkpoint: Path
    best_checkpoint: Optional[Path]
    global_step: int
    updates: int
    episodes: int
    best_return: Optional[float]
    losses: List[float] = field(default_factory=list)

    @property
    def first_loss(self) -> Optional[float]:
        return self.losses[0] if self.losses else None

    @property
    def last_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def _stream_seed(seed: int, worker: int) -> int:
    return int(np.random.SeedSequence([seed, worker]).generate_state(1)[0])


class Trainer:
    """
    Owns the buffer, the agent, the collectors and the metrics stream of one run

    With num_workers == 1 everything runs on the calling thread and a run is fully
    determined by its configuration. With more workers the collectors step in a
    thread pool; each episode is still inserted atomically.
    """

    def __init__(
        self,
        config: RunConfig,
        run_dir: Optional[Union[str, Path]] = None,
        frames_dir: Optional[Union[str, Path]] = None,
    ):
        self.config = config
        schedule = config.schedule
        self.run_dir = Path(run_dir) if run_dir else resolve_run_dir(schedule.run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        for issue in validate_configuration(config):
            logger.warning(f"Configuration: {issue}")

        tf.keras.utils.set_random_seed(schedule.seed)
        if settings.deterministic_ops:
            tf.config.experimental.enable_op_determinism()

        self.buffer = MultiSourceBuffer.from_config(config.replay, multisource=config.multisource, seed=schedule.seed)
        self.agent = Agent(config)
        self.collectors = [
            Collector(
                DrivingSimulator.from_config(config.env),
                self.agent,
                seed=_stream_seed(schedule.seed, worker),
                frames_dir=frames_dir if worker == 0 else None,
            )
            for worker in range(schedule.num_workers)
        ]
        self._next_ids = list(range(schedule.num_workers))

        self.metrics_path = self.run_dir / METRICS_FILE
        self.global_step = 0
        self.updates = 0
        self.episodes = 0
        self.best_return: Optional[float] = None
        self.best_checkpoint: Optional[Path] = None
        self.losses: List[float] = []
        self._last_eval = 0
        self._last_checkpoint = 0

        logger.info(
            f"Trainer ready: variant={config.variant} seed={schedule.seed} workers={schedule.num_workers} "
            f"run_dir={self.run_dir}"
        )

    # ---- collection -------------------------------------------------------

    def exploration_std(self) -> float:
        """Exploration noise, annealed linearly from expl_noise to expl_noise_min"""
        schedule = self.config.schedule
        decay = schedule.expl_decay_steps or schedule.total_env_steps
        fraction = min(1.0, self.global_step / max(decay, 1))
        return max(schedule.expl_noise_min, schedule.expl_noise + fraction * (schedule.expl_noise_min - schedule.expl_noise))

    def _episode_id(self, worker: int) -> int:
        episode_id = self._next_ids[worker]
        self._next_ids[worker] += len(self.collectors)
        return episode_id

    def _collect(self, worker: int, steps: int, random_policy: bool, expl_std: float) -> List[Episode]:
        collector = self.collectors[worker]
        finished = []
        for _ in range(steps):
            if not collector.active:
                collector.begin(self._episode_id(worker))
            episode = collector.step(random_policy=random_policy, expl_std=expl_std)
            if episode is not None:
                finished.append(episode)
        return finished

    def _store(self, episodes: List[Episode], writer: MetricsWriter, phase: str) -> None:
        for episode in episodes:
            self.buffer.add_episode(episode)
            self.episodes += 1
            summary = summarize(episode)
            writer.write(
                "episode",
                self.global_step,
                phase=phase,
                episode_id=summary.episode_id,
                episode_return=summary.episode_return,
                length=summary.length,
                termination=summary.termination,
                weather=summary.weather,
                layout=summary.layout,
                **flatten_stats(self.buffer.stats()),
            )
            logger.debug(
                f"Episode {summary.episode_id} ({phase}): return={summary.episode_return:.2f} "
                f"length={summary.length} termination={summary.termination}"
            )

    def collect_round(self, steps: int, writer: MetricsWriter, random_policy: bool = False, phase: str = "train") -> None:
        """Advance every collector by `steps` environment steps and store finished episodes"""
        expl_std = self.exploration_std()
        if len(self.collectors) == 1:
            finished = [self._collect(0, steps, random_policy, expl_std)]
        else:
            with ThreadPoolExecutor(max_workers=len(self.collectors)) as executor:
                futures = [
                    executor.submit(self._collect, worker, steps, random_policy, expl_std)
                    for worker in range(len(self.collectors))
                ]
                finished = [future.result() for future in futures]
        self.global_step += steps * len(self.collectors)
        for episodes in finished:
            self._store(episodes, writer, phase)

    def prefill(self, writer: MetricsWriter) -> None:
        """
        Fill the buffer with uniformly random episodes

        Runs at least prefill_episodes episodes and continues until a batch can be sampled.

        Raises:
            ConfigurationError: If max_prefill_episodes episodes still leave the buffer unsamplable
        """
        schedule = self.config.schedule
        while self.episodes < schedule.prefill_episodes or not self.buffer.is_samplable():
            if self.episodes >= schedule.max_prefill_episodes:
                raise ConfigurationError(
                    f"Replay buffer not samplable after {self.episodes} prefill episodes; "
                    f"episodes are shorter than replay.sequence_length={self.config.replay.sequence_length}"
                )
            self.collect_round(1, writer, random_policy=True, phase="prefill")
        logger.info(f"Prefill done: {self.episodes} episodes, {self.global_step} steps")

    # ---- updates ----------------------------------------------------------

    def update(self, writer: MetricsWriter) -> None:
        """One world-model step followed by one behavior step on its posterior states"""
        replay = self.config.replay
        batch = self.buffer.sample_batch(replay.batch_size, replay.sequence_length)
        breakdown, posterior_states = self.agent.world_model.train_step(batch)
        behavior = self.agent.actor_critic.train_step(posterior_states)
        self.updates += 1
        self.losses.append(breakdown.total)

        sources: Dict[str, int] = {}
        for kind in batch.sources:
            sources[f"batch_{kind.value}"] = sources.get(f"batch_{kind.value}", 0) + 1
        writer.write(
            "train",
            self.global_step,
            update=self.updates,
            expl_std=self.exploration_std(),
            **breakdown.as_dict(),
            **behavior.as_dict(),
            **sources,
            **flatten_stats(self.buffer.stats()),
        )
        if self.updates % 100 == 0:
            logger.info(
                f"step={self.global_step} update={self.updates} loss={breakdown.total:.3f} "
                f"actor={behavior.actor_loss:.3f} critic={behavior.critic_loss:.3f}"
            )

    # ---- evaluation and checkpoints --------------------------------------

    def evaluate(self, writer: MetricsWriter) -> float:
        """Greedy evaluation on the configured weathers; keeps best.ckpt up to date"""
        schedule = self.config.schedule
        rows = evaluate_agent(
            self.agent, schedule.eval_weathers, schedule.eval_episodes, seed=schedule.seed + EVAL_SEED_OFFSET
        )
        for row in rows:
            writer.write("eval", self.global_step, **row.as_dict())
        score = float(np.mean([row.mean_return for row in rows]))

        if self.best_return is None or score > self.best_return:
            self.best_return = score
            self.best_checkpoint = self.agent.save(
                self.run_dir / "best.ckpt", self.global_step, self.best_return, updates=self.updates
            )
            logger.info(f"New best eval return {score:.2f} at step {self.global_step}")
        return score

    def _maybe_periodic(self, writer: MetricsWriter) -> None:
        schedule = self.config.schedule
        if self.global_step // schedule.eval_every > self._last_eval // schedule.eval_every:
            self._last_eval = self.global_step
            self.evaluate(writer)
        if self.global_step // schedule.checkpoint_every > self._last_checkpoint // schedule.checkpoint_every:
            self._last_checkpoint = self.global_step
            self.agent.save(self.run_dir / "latest.ckpt", self.global_step, self.best_return, updates=self.updates)

    def _diagnostic(self, error: NumericalError) -> None:
        path = self.run_dir / "diagnostic.ckpt"
        try:
            checkpoint = self.agent.to_checkpoint(
                self.global_step, self.best_return, updates=self.updates, failed_component=error.component
            )
            save_checkpoint(path, checkpoint)
            logger.error(f"Numerical failure in '{error.component}'; diagnostic checkpoint written to {path}")
        except OSError as e:
            logger.error(f"Numerical failure in '{error.component}'; could not write diagnostic checkpoint: {e}")

    def run(self) -> TrainResult:
        """
        Train until total_env_steps environment steps have been collected

        A metrics.jsonl left in run_dir by an earlier run is replaced, so the file always
        holds exactly one stream.

        Raises:
            NumericalError: On a non-finite loss, after writing diagnostic.ckpt
        """
        schedule = self.config.schedule
        if self.metrics_path.exists() and self.metrics_path.stat().st_size > 0:
            logger.warning(f"Replacing metrics of an earlier run in {self.metrics_path}")
        with MetricsWriter(self.metrics_path, overwrite=True) as writer:
            try:
                self.prefill(writer)
                while self.global_step < schedule.total_env_steps:
                    remaining = schedule.total_env_steps - self.global_step
                    steps = max(1, min(schedule.env_steps_per_update, remaining // len(self.collectors)))
                    self.collect_round(steps, writer)
                    for _ in range(schedule.updates_per_round):
                        self.update(writer)
                    self._maybe_periodic(writer)
            except NumericalError as e:
                self._diagnostic(e)
                raise

        final = self.agent.save(self.run_dir / "final.ckpt", self.global_step, self.best_return, updates=self.updates)
        logger.info(
            f"Training finished: {self.global_step} steps, {self.updates} updates, {self.episodes} episodes; "
            f"final checkpoint {final}"
        )
        return TrainResult(
            run_dir=self.run_dir,
            metrics_path=self.metrics_path,
            final_checkpoint=final,
            best_checkpoint=self.best_checkpoint,
            global_step=self.global_step,
            updates=self.updates,
            episodes=self.episodes,
            best_return=self.best_return,
            losses=list(self.losses),
        )


def train(
    config: RunConfig,
    run_dir: Optional[Union[str, Path]] = None,
    frames_dir: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Build a Trainer for `config` and run it to completion"""
    return Trainer(config, run_dir=run_dir, frames_dir=frames_dir).run()
