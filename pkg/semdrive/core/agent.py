"""
Agent: world model plus actor-critic, with the per-step policy and checkpoint I/O
"""

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import tensorflow as tf

from ..behavior.actor_critic import ActorCritic
from ..models.checkpoint import Checkpoint, check_compatible, load_checkpoint, save_checkpoint
from ..models.rssm import LatentState
from ..models.world_model import WorldModel
from ..utils.config import RunConfig

logger = logging.getLogger(__name__)


def _optimizer_state(optimizer) -> list:
    return [np.array(v.numpy(), copy=True) for v in optimizer.variables]


def _restore_optimizer(optimizer, values: list) -> None:
    variables = optimizer.variables
    if len(variables) != len(values):
        logger.warning(
            f"Optimizer state has {len(values)} arrays, expected {len(variables)}; keeping fresh state"
        )
        return
    for variable, value in zip(variables, values):
        variable.assign(value)


class Agent:
    """
    Everything a run trains: the world model and the actor-critic on its features

    The variant decides the wiring (see RunConfig.use_filter / multisource); the
    agent itself is identical across variants.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.world_model = WorldModel(config)
        self.actor_critic = ActorCritic(self.world_model, config.behavior, seed=config.schedule.seed)
        if config.model.use_tf_function:
            self._observe_fn = tf.function(self._observe)
        else:
            self._observe_fn = self._observe
        logger.info(
            f"Agent built: variant={config.variant} features={self.world_model.feature_size} "
            f"dtype={config.model.dtype}"
        )

    def initial_state(self, batch_size: int = 1) -> LatentState:
        return self.world_model.initial_state(batch_size)

    def _observe(self, state: LatentState, prev_action: tf.Tensor, obs: tf.Tensor, seed: tf.Tensor):
        posterior, _, _ = self.world_model.observe_step(state, prev_action, obs, seed)
        return posterior, self.world_model.features(posterior)

    def observe(
        self, state: LatentState, prev_action: np.ndarray, obs: np.ndarray, seed: np.ndarray
    ) -> Tuple[LatentState, tf.Tensor]:
        """Fold one observation into the latent state; returns (posterior, behavior features)"""
        return self._observe_fn(
            state,
            tf.convert_to_tensor(np.asarray(prev_action, dtype=np.float32).reshape(-1, 2)),
            tf.convert_to_tensor(np.asarray(obs, dtype=np.uint8).reshape((-1,) + obs.shape[-3:])),
            tf.convert_to_tensor(np.asarray(seed, dtype=np.int64)),
        )

    def act(
        self,
        features: tf.Tensor,
        greedy: bool,
        rng: np.random.Generator,
        expl_std: float = 0.0,
    ) -> np.ndarray:
        """(N, 2) actions; greedy uses the distribution mode, otherwise a sample plus exploration noise"""
        batch = int(features.shape[0])
        if greedy:
            return self.actor_critic.act(features, greedy=True)
        return self.actor_critic.act(
            features,
            noise=rng.standard_normal((batch, 2)),
            expl_std=expl_std,
            expl_noise=rng.standard_normal((batch, 2)),
        )

    # ---- checkpoints ------------------------------------------------------

    def to_checkpoint(self, global_step: int, best_return: Optional[float] = None, **extra) -> Checkpoint:
        return Checkpoint(
            config=self.config.model_dump(mode="json"),
            fingerprint=self.config.architecture_fingerprint(),
            weights={"world_model": self.world_model.snapshot(), **self.actor_critic.get_weights()},
            optimizers={
                "world_model": _optimizer_state(self.world_model.optimizer),
                "actor": _optimizer_state(self.actor_critic.actor_optimizer),
                "critic": _optimizer_state(self.actor_critic.critic_optimizer),
            },
            global_step=global_step,
            best_return=best_return,
            extra=extra,
        )

    def save(self, path: Union[str, Path], global_step: int, best_return: Optional[float] = None, **extra) -> Path:
        return save_checkpoint(path, self.to_checkpoint(global_step, best_return, **extra))

    def restore(self, checkpoint: Checkpoint) -> None:
        check_compatible(checkpoint, self.config)
        self.world_model.set_weights(checkpoint.weights["world_model"])
        self.actor_critic.set_weights(checkpoint.weights)
        _restore_optimizer(self.world_model.optimizer, checkpoint.optimizers.get("world_model", []))
        _restore_optimizer(self.actor_critic.actor_optimizer, checkpoint.optimizers.get("actor", []))
        _restore_optimizer(self.actor_critic.critic_optimizer, checkpoint.optimizers.get("critic", []))

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], config: Optional[RunConfig] = None) -> Tuple["Agent", Checkpoint]:
        """
        Rebuild an agent from a checkpoint file

        Args:
            path: Checkpoint file
            config: Configuration to build with; the checkpoint's own configuration when omitted

        Raises:
            CheckpointMismatchError: If `config` describes a different architecture
        """
        checkpoint = load_checkpoint(path, expected=config)
        agent = cls(config or checkpoint.run_config())
        agent.restore(checkpoint)
        logger.info(f"Restored agent from {path} (step {checkpoint.global_step})")
        return agent, checkpoint
