"""
Actor-critic learning on trajectories imagined by the world model
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
import tensorflow as tf

from ..env.vehicle import ACTION_BOUNDS
from ..models.networks import mlp
from ..models.rssm import LatentState
from ..models.world_model import WorldModel
from ..utils.config import BehaviorConfig
from ..utils.errors import ArgumentError, NumericalError
from .returns import TDLambdaTargets, td_lambda

logger = logging.getLogger(__name__)

keras = tf.keras

ACTION_SIZE = 2
LOG_2 = math.log(2.0)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)

Policy = Callable[[tf.Tensor], tf.Tensor]


class ActionDistribution(NamedTuple):
    """Diagonal Gaussian over pre-squash actions; actions are tanh(x) scaled to the bounds"""

    mean: tf.Tensor
    std: tf.Tensor

    def _bounds(self) -> tf.Tensor:
        return tf.constant(ACTION_BOUNDS, dtype=self.mean.dtype)

    def squash(self, pre: tf.Tensor) -> tf.Tensor:
        return tf.tanh(pre) * self._bounds()

    def sample(self, noise: tf.Tensor) -> Tuple[tf.Tensor, tf.Tensor]:
        """Reparameterized sample from standard-normal `noise`; returns (action, entropy estimate)"""
        pre = self.mean + self.std * tf.cast(noise, self.mean.dtype)
        return self.squash(pre), self.entropy(pre)

    def mode(self) -> tf.Tensor:
        return self.squash(self.mean)

    def entropy(self, pre: tf.Tensor) -> tf.Tensor:
        """Gaussian entropy plus the log-Jacobian of the squash evaluated at `pre`"""
        gaussian = HALF_LOG_2PIE + tf.math.log(self.std)
        log_det = tf.math.log(self._bounds()) + 2.0 * (LOG_2 - pre - tf.nn.softplus(-2.0 * pre))
        return tf.reduce_sum(gaussian + log_det, axis=-1)


class Actor(keras.Model):
    """Stochastic policy over (throttle, steer) reading only the behavior features"""

    def __init__(self, hidden_size: int, min_std: float = 0.1, dtype: str = "float32", name: str = "actor"):
        super().__init__(name=name, dtype=dtype)
        self.min_std = min_std
        self.network = mlp([hidden_size, hidden_size], 2 * ACTION_SIZE, dtype=dtype, name="actor_mlp")

    def call(self, features: tf.Tensor) -> tf.Tensor:
        return self.network(features)

    def distribution(self, features: tf.Tensor) -> ActionDistribution:
        mean, raw_std = tf.split(self(features), 2, axis=-1)
        return ActionDistribution(mean=mean, std=tf.nn.softplus(raw_std) + self.min_std)


class Critic(keras.Model):
    """Scalar state-value head on the behavior features"""

    def __init__(self, hidden_size: int, dtype: str = "float32", name: str = "critic"):
        super().__init__(name=name, dtype=dtype)
        self.network = mlp([hidden_size, hidden_size], 1, dtype=dtype, name="critic_mlp")

    def call(self, features: tf.Tensor) -> tf.Tensor:
        return tf.squeeze(self.network(features), axis=-1)


class ImaginedTrajectory(NamedTuple):
    """Time-major imagined rollout from N start states"""

    states: LatentState  # (I+1, N, ...)
    filtered: tf.Tensor  # (I+1, N, F)
    actions: tf.Tensor  # (I, N, 2)
    rewards: tf.Tensor  # (I, N)
    values: tf.Tensor  # (I+1, N)
    discounts: tf.Tensor  # (I, N)
    entropies: tf.Tensor  # (I, N)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True)
class BehaviorMetrics:
    actor_loss: float
    critic_loss: float
    entropy: float
    imagined_reward: float
    target_value: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def critic_loss(traj: ImaginedTrajectory, targets: TDLambdaTargets) -> tf.Tensor:
    """
    Mean half squared error between v(s_t) and the gradient-blocked targets, t = 0 .. I-1

    traj.values holds I+1 entries (the last one bootstraps the targets) while
    targets.values holds I; the final value enters the loss only through the targets.
    """
    residual = traj.values[:-1] - tf.stop_gradient(tf.cast(targets.values, traj.values.dtype))
    return tf.reduce_mean(0.5 * tf.square(residual))


def actor_loss(traj: ImaginedTrajectory, targets: TDLambdaTargets, eta: float) -> tf.Tensor:
    """Negative mean target value minus eta times the mean action entropy"""
    if eta < 0:
        raise ArgumentError(f"eta must be >= 0, got {eta}")
    return -tf.reduce_mean(targets.values) - eta * tf.reduce_mean(traj.entropies)


class ActorCritic:
    """
    Actor and critic trained on imagined rollouts of a fixed world model

    Gradients of the actor objective flow back through the imagined dynamics into
    the actions, but only actor and critic weights are ever updated.
    """

    def __init__(self, world_model: WorldModel, config: BehaviorConfig, seed: int = 0):
        self.world_model = world_model
        self.config = config
        self.dtype = world_model.dtype

        self.actor = Actor(config.hidden_size, config.min_std, dtype=self.dtype)
        self.critic = Critic(config.hidden_size, dtype=self.dtype)
        self.actor_optimizer = keras.optimizers.Adam(
            learning_rate=config.actor_learning_rate, epsilon=1e-5, global_clipnorm=config.grad_clip
        )
        self.critic_optimizer = keras.optimizers.Adam(
            learning_rate=config.critic_learning_rate, epsilon=1e-5, global_clipnorm=config.grad_clip
        )
        self._generator = tf.random.Generator.from_seed(seed + 1)

        dummy = tf.zeros([1, world_model.feature_size], dtype=self.dtype)
        self.actor(dummy)
        self.critic(dummy)
        self.actor_optimizer.build(self.actor.trainable_variables)
        self.critic_optimizer.build(self.critic.trainable_variables)

        if world_model.config.use_tf_function:
            self._gradients_fn = tf.function(self._compute_gradients)
            self._apply_fn = tf.function(self._apply_gradients)
        else:
            self._gradients_fn = self._compute_gradients
            self._apply_fn = self._apply_gradients

    def reseed(self, seed: int) -> None:
        self._generator.reset_from_seed(seed + 1)

    def _noise(self, shape) -> tf.Tensor:
        seed = self._generator.make_seeds(1)[:, 0]
        return tf.random.stateless_normal(shape, seed=seed, dtype=self.dtype)

    def imagine(
        self, start_states: LatentState, horizon: int, policy: Optional[Policy] = None
    ) -> ImaginedTrajectory:
        """
        Roll the world model forward from posterior states without observations

        Args:
            start_states: Posterior states with any leading shape; flattened to N starts
            horizon: Number of imagined steps I
            policy: Optional replacement for the actor mapping features to actions

        Raises:
            ArgumentError: If horizon < 1
        """
        if horizon < 1:
            raise ArgumentError(f"horizon must be >= 1, got {horizon}")
        model = self.world_model
        state = start_states.flatten().stop_gradient()
        features = model.features(state)

        hs, zs, filtered = [state.h], [state.z], [features]
        actions, rewards, entropies = [], [], []
        for _ in range(horizon):
            if policy is None:
                dist = self.actor.distribution(features)
                action, entropy = dist.sample(self._noise(tf.shape(dist.mean)))
            else:
                action = tf.cast(policy(features), self.dtype)
                entropy = tf.zeros(tf.shape(action)[:-1], dtype=self.dtype)
            state, _ = model.imagine_step(state, action)
            features = model.features(state)
            hs.append(state.h)
            zs.append(state.z)
            filtered.append(features)
            actions.append(action)
            entropies.append(entropy)
            rewards.append(model.predict_reward(features).mean)

        filtered = tf.stack(filtered, axis=0)
        rewards = tf.stack(rewards, axis=0)
        return ImaginedTrajectory(
            states=LatentState(tf.stack(hs, axis=0), tf.stack(zs, axis=0)),
            filtered=filtered,
            actions=tf.stack(actions, axis=0),
            rewards=rewards,
            values=self.critic(filtered),
            discounts=tf.cast(self.config.gamma, self.dtype) * tf.ones_like(rewards),
            entropies=tf.stack(entropies, axis=0),
        )

    def targets(self, traj: ImaginedTrajectory) -> TDLambdaTargets:
        return td_lambda(traj.rewards, traj.values, traj.discounts, self.config.lam)

    def _compute_gradients(self, start_states: LatentState):
        cfg = self.config
        actor_vars = self.actor.trainable_variables
        critic_vars = self.critic.trainable_variables

        with tf.GradientTape(watch_accessed_variables=False) as actor_tape:
            actor_tape.watch(actor_vars)
            traj = self.imagine(start_states, cfg.horizon)
            targets = self.targets(traj)
            a_loss = actor_loss(traj, targets, cfg.eta)

        traj = traj._replace(filtered=tf.stop_gradient(traj.filtered))
        with tf.GradientTape(watch_accessed_variables=False) as critic_tape:
            critic_tape.watch(critic_vars)
            c_loss = critic_loss(traj._replace(values=self.critic(traj.filtered)), targets)

        actor_grads = actor_tape.gradient(a_loss, actor_vars)
        critic_grads = critic_tape.gradient(c_loss, critic_vars)
        finite = [tf.reduce_all(tf.math.is_finite(g)) for g in list(actor_grads) + list(critic_grads) if g is not None]
        metrics = {
            "actor_loss": a_loss,
            "critic_loss": c_loss,
            "entropy": tf.reduce_mean(traj.entropies),
            "imagined_reward": tf.reduce_mean(traj.rewards),
            "target_value": tf.reduce_mean(targets.values),
            "gradients_finite": tf.reduce_all(tf.stack(finite)),
        }
        return metrics, actor_grads, critic_grads

    def _apply_gradients(self, actor_grads, critic_grads):
        self.actor_optimizer.apply_gradients(zip(actor_grads, self.actor.trainable_variables))
        self.critic_optimizer.apply_gradients(zip(critic_grads, self.critic.trainable_variables))

    def train_step(self, start_states: LatentState) -> BehaviorMetrics:
        """
        One actor update and one critic update from the given posterior start states

        Raises:
            NumericalError: If a behavior loss or gradient is non-finite (no update is applied)
        """
        raw, actor_grads, critic_grads = self._gradients_fn(start_states)
        values = {}
        for name in ("actor_loss", "critic_loss", "entropy", "imagined_reward", "target_value"):
            value = float(raw[name].numpy())
            if not math.isfinite(value):
                raise NumericalError(name, value)
            values[name] = value
        if not bool(raw["gradients_finite"].numpy()):
            raise NumericalError("behavior_gradients")
        self._apply_fn(actor_grads, critic_grads)
        return BehaviorMetrics(**values)

    def act(
        self, features: tf.Tensor, greedy: bool = False, noise: Optional[np.ndarray] = None, expl_std: float = 0.0,
        expl_noise: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        Actions for environment interaction

        Args:
            features: (N, F) behavior features
            greedy: Use the distribution mode (evaluation)
            noise: Standard-normal draws for the policy sample
            expl_std: Scale of the additive exploration noise on pre-squash actions
            expl_noise: Standard-normal draws for the exploration noise

        Returns:
            (N, 2) float32 actions within the bounds
        """
        dist = self.actor.distribution(tf.cast(features, self.dtype))
        if greedy:
            return dist.mode().numpy().astype(np.float32)
        pre = dist.mean + dist.std * tf.cast(noise, self.dtype)
        if expl_std > 0.0 and expl_noise is not None:
            pre = pre + tf.cast(expl_std * expl_noise, self.dtype)
        return dist.squash(pre).numpy().astype(np.float32)

    def get_weights(self) -> Dict[str, list]:
        return {"actor": self.actor.get_weights(), "critic": self.critic.get_weights()}

    def set_weights(self, weights: Dict[str, list]) -> None:
        self.actor.set_weights(weights["actor"])
        self.critic.set_weights(weights["critic"])
