"""
Latent world model with a semantic filter, mask/observation/reward decoders and the joint training loss
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import tensorflow as tf

from ..utils.config import RunConfig
from ..utils.errors import NumericalError, ProtocolError
from .networks import ConvDecoder, ConvEncoder, UnitGaussian, mlp, normalize_image
from .rssm import RSSM, LatentState, StateDistribution, kl_divergence

logger = logging.getLogger(__name__)

keras = tf.keras

ACTION_SIZE = 2


@dataclass(frozen=True)
class LossBreakdown:
    """
    Loss terms of one batch, summed over time and averaged over the batch

    total = image_nll + mask_nll + reward_nll + beta * kl_penalty, where kl_penalty
    equals kl unless free nats lift it.
    """

    image_nll: float
    mask_nll: float
    reward_nll: float
    kl: float
    kl_penalty: float
    beta: float
    total: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


class WorldModel:
    """
    Encoder, recurrent state-space model, semantic filter and the three decoders

    With use_filter off (the no_filter variant) neither the filter nor the mask
    decoder is built: the reward head reads (h, z) directly and the mask term is 0.
    """

    def __init__(self, config: RunConfig, seed: Optional[int] = None):
        self.run_config = config
        self.config = config.model
        self.image_size = config.env.image_size
        self.use_filter = config.use_filter
        self.dtype = self.config.dtype
        cfg = self.config

        self.rssm = RSSM(
            cfg.deter_size, cfg.stoch_groups, cfg.stoch_classes, cfg.hidden_size,
            action_size=ACTION_SIZE, latent_mode=cfg.latent_mode, dtype=self.dtype,
        )
        self.components: Dict[str, keras.Model] = {
            "encoder": ConvEncoder(self.image_size, cfg.cnn_depth, dtype=self.dtype),
            "rssm": self.rssm,
            "obs_decoder": ConvDecoder(self.image_size, cfg.cnn_depth, dtype=self.dtype, name="obs_decoder"),
            "reward_head": mlp([cfg.hidden_size, cfg.hidden_size], 1, dtype=self.dtype, name="reward_head"),
        }
        if self.use_filter:
            self.components["filter"] = mlp(
                [cfg.hidden_size, cfg.hidden_size], cfg.filter_size, dtype=self.dtype, name="filter"
            )
            self.components["mask_decoder"] = ConvDecoder(
                self.image_size, cfg.cnn_depth, dtype=self.dtype, name="mask_decoder"
            )

        self.optimizer = keras.optimizers.Adam(
            learning_rate=cfg.learning_rate, epsilon=cfg.adam_epsilon, global_clipnorm=cfg.grad_clip
        )
        self._generator = tf.random.Generator.from_seed(
            config.schedule.seed if seed is None else seed
        )
        self._build()

        if cfg.use_tf_function:
            self._gradients_fn = tf.function(self._compute_gradients)
            self._apply_fn = tf.function(self._apply_gradients)
        else:
            self._gradients_fn = self._compute_gradients
            self._apply_fn = self._apply_gradients

    # ---- construction -------------------------------------------------

    def _build(self) -> None:
        """Create every weight with a dummy forward pass"""
        obs = tf.zeros([1, self.image_size, self.image_size, 3], dtype=tf.uint8)
        state, _, _ = self.observe_step(self.initial_state(1), tf.zeros([1, ACTION_SIZE]), obs)
        self.predict_obs(state)
        features = self.features(state)
        self.predict_reward(features)
        if self.use_filter:
            self.predict_mask(features)
        self.optimizer.build(self.trainable_variables)

    @property
    def feature_size(self) -> int:
        if self.use_filter:
            return self.config.filter_size
        return self.config.deter_size + self.config.stoch_groups * self.config.stoch_classes

    @property
    def trainable_variables(self) -> List[tf.Variable]:
        variables = []
        for name in sorted(self.components):
            variables.extend(self.components[name].trainable_variables)
        return variables

    # ---- sampling -----------------------------------------------------

    def reseed(self, seed: int) -> None:
        self._generator.reset_from_seed(seed)

    def next_seed(self) -> tf.Tensor:
        return self._generator.make_seeds(1)[:, 0]

    # ---- latent dynamics ----------------------------------------------

    def initial_state(self, batch_size: int) -> LatentState:
        return self.rssm.initial_state(batch_size)

    def encode(self, obs: tf.Tensor) -> tf.Tensor:
        return self.components["encoder"](obs)

    def observe_step(
        self, prev: LatentState, prev_action: tf.Tensor, obs: tf.Tensor, seed: Optional[tf.Tensor] = None
    ) -> Tuple[LatentState, StateDistribution, StateDistribution]:
        """Posterior update from the previous state, the action that led here and the new observation"""
        seed = self.next_seed() if seed is None else seed
        return self.rssm.observe_step(prev, prev_action, self.encode(obs), seed)

    def imagine_step(
        self, prev: LatentState, action: tf.Tensor, seed: Optional[tf.Tensor] = None
    ) -> Tuple[LatentState, StateDistribution]:
        """Prior-only transition; consumes no observation"""
        seed = self.next_seed() if seed is None else seed
        return self.rssm.imagine_step(prev, action, seed)

    def observe(
        self, observations: tf.Tensor, actions: tf.Tensor, initial: Optional[LatentState] = None
    ) -> Tuple[LatentState, StateDistribution, StateDistribution]:
        """
        Unroll observe_step over (B, L) sequences

        Images are encoded in one batched pass; returned states and distributions are (B, L, ...).
        """
        batch, length = observations.shape[0], observations.shape[1]
        flat_obs = tf.reshape(observations, [-1, self.image_size, self.image_size, 3])
        embeds = tf.reshape(self.encode(flat_obs), [batch, length, -1])
        actions = tf.cast(actions, self.dtype)

        state = self.initial_state(batch) if initial is None else initial
        hs, zs, post_logits, prior_logits = [], [], [], []
        for t in range(length):
            state, posterior, prior = self.rssm.observe_step(state, actions[:, t], embeds[:, t], self.next_seed())
            hs.append(state.h)
            zs.append(state.z)
            post_logits.append(posterior.logits)
            prior_logits.append(prior.logits)

        return (
            LatentState(tf.stack(hs, axis=1), tf.stack(zs, axis=1)),
            StateDistribution(tf.stack(post_logits, axis=1)),
            StateDistribution(tf.stack(prior_logits, axis=1)),
        )

    # ---- heads ----------------------------------------------------------

    def filter(self, state: LatentState) -> tf.Tensor:
        """Driving-relevant feature s_m of shape (batch, D_m)"""
        if not self.use_filter:
            raise ProtocolError("The no_filter variant has no semantic filter")
        return self.components["filter"](state.concat())

    def features(self, state: LatentState) -> tf.Tensor:
        """Input of the reward head and of behavior learning"""
        if self.use_filter:
            return self.filter(state)
        return state.concat()

    def predict_mask(self, s_m: tf.Tensor) -> UnitGaussian:
        if not self.use_filter:
            raise ProtocolError("The no_filter variant has no mask decoder")
        return UnitGaussian(self.components["mask_decoder"](s_m))

    def predict_obs(self, state: LatentState) -> UnitGaussian:
        return UnitGaussian(self.components["obs_decoder"](state.concat()))

    def predict_reward(self, features: tf.Tensor) -> UnitGaussian:
        return UnitGaussian(tf.squeeze(self.components["reward_head"](features), axis=-1))

    # ---- loss -----------------------------------------------------------

    def _kl_terms(self, posterior: StateDistribution, prior: StateDistribution) -> Tuple[tf.Tensor, tf.Tensor]:
        cfg = self.config
        kl = kl_divergence(posterior, prior)
        if cfg.kl_balancing:
            frozen_post = StateDistribution(tf.stop_gradient(posterior.logits))
            frozen_prior = StateDistribution(tf.stop_gradient(prior.logits))
            penalty = (
                cfg.kl_balance * kl_divergence(frozen_post, prior)
                + (1.0 - cfg.kl_balance) * kl_divergence(posterior, frozen_prior)
            )
        else:
            penalty = kl
        if cfg.free_nats > 0.0:
            penalty = tf.maximum(penalty, tf.cast(cfg.free_nats, penalty.dtype))
        return kl, penalty

    def compute_loss(
        self, observations: tf.Tensor, masks: tf.Tensor, actions: tf.Tensor, rewards: tf.Tensor
    ) -> Tuple[Dict[str, tf.Tensor], LatentState]:
        """
        Joint loss over a (B, L) batch

        Args:
            observations: (B, L, H, W, 3) uint8 observations o_t
            masks: (B, L, H, W, 3) uint8 semantic masks m_t
            actions: (B, L, 2) actions a_{t-1} paired with o_t
            rewards: (B, L) rewards received on arrival at o_t

        Returns:
            Dictionary of loss tensors and the (B, L) posterior states
        """
        batch = observations.shape[0]
        posterior_states, posterior, prior = self.observe(observations, actions)
        flat = posterior_states.flatten()
        size = self.image_size
        per_batch = tf.cast(batch, self.dtype)

        obs_target = normalize_image(tf.reshape(observations, [-1, size, size, 3]), self.dtype)
        image_nll = tf.reduce_sum(self.predict_obs(flat).nll(obs_target)) / per_batch

        features = self.features(flat)
        if self.use_filter:
            mask_target = normalize_image(tf.reshape(masks, [-1, size, size, 3]), self.dtype)
            mask_nll = tf.reduce_sum(self.predict_mask(features).nll(mask_target)) / per_batch
        else:
            mask_nll = tf.zeros([], dtype=self.dtype)

        reward_target = tf.reshape(tf.cast(rewards, self.dtype), [-1])
        reward_nll = tf.reduce_sum(self.predict_reward(features).nll(reward_target)) / per_batch

        kl, penalty = self._kl_terms(posterior, prior)
        kl = tf.reduce_sum(kl) / per_batch
        penalty = tf.reduce_sum(penalty) / per_batch
        beta = tf.cast(self.config.beta, self.dtype)

        losses = {
            "image_nll": image_nll,
            "mask_nll": mask_nll,
            "reward_nll": reward_nll,
            "kl": kl,
            "kl_penalty": penalty,
            "total": image_nll + mask_nll + reward_nll + beta * penalty,
        }
        return losses, posterior_states

    def _compute_gradients(self, observations, masks, actions, rewards):
        variables = self.trainable_variables
        with tf.GradientTape() as tape:
            losses, posterior_states = self.compute_loss(observations, masks, actions, rewards)
        gradients = tape.gradient(losses["total"], variables)
        finite = [tf.reduce_all(tf.math.is_finite(g)) for g in gradients if g is not None]
        losses["gradients_finite"] = tf.reduce_all(tf.stack(finite))
        return losses, gradients, posterior_states.stop_gradient()

    def _apply_gradients(self, gradients):
        pairs = [(g, v) for g, v in zip(gradients, self.trainable_variables) if g is not None]
        self.optimizer.apply_gradients(pairs)

    def _batch_tensors(self, batch: Any) -> Tuple[tf.Tensor, tf.Tensor, tf.Tensor, tf.Tensor]:
        return (
            tf.convert_to_tensor(batch.observations, dtype=tf.uint8),
            tf.convert_to_tensor(batch.masks, dtype=tf.uint8),
            tf.cast(np.asarray(batch.actions), self.dtype),
            tf.cast(np.asarray(batch.rewards), self.dtype),
        )

    def _breakdown(self, losses: Dict[str, tf.Tensor]) -> LossBreakdown:
        values = {}
        for name in ("image_nll", "mask_nll", "reward_nll", "kl", "kl_penalty", "total"):
            value = float(losses[name].numpy())
            if not math.isfinite(value):
                raise NumericalError(name, value)
            values[name] = value
        return LossBreakdown(beta=float(self.config.beta), **values)

    def loss(self, batch: Any) -> LossBreakdown:
        """Evaluate the joint loss on a sequence batch without updating parameters"""
        losses, _ = self.compute_loss(*self._batch_tensors(batch))
        return self._breakdown(losses)

    def train_step(self, batch: Any) -> Tuple[LossBreakdown, LatentState]:
        """
        One optimizer step on a sequence batch

        Returns:
            The loss breakdown before the update and the gradient-stopped posterior states (B, L)

        Raises:
            NumericalError: If a loss component or gradient is non-finite; no update is applied
        """
        losses, gradients, posterior_states = self._gradients_fn(*self._batch_tensors(batch))
        breakdown = self._breakdown(losses)
        if not bool(losses["gradients_finite"].numpy()):
            raise NumericalError("gradients")
        self._apply_fn(gradients)
        return breakdown, posterior_states

    # ---- weights --------------------------------------------------------

    def get_weights(self) -> Dict[str, List[np.ndarray]]:
        return {name: component.get_weights() for name, component in self.components.items()}

    def set_weights(self, weights: Dict[str, List[np.ndarray]]) -> None:
        for name, component in self.components.items():
            component.set_weights(weights[name])

    def snapshot(self) -> Dict[str, List[np.ndarray]]:
        """Copy of every parameter array; later updates do not alter it"""
        return {name: [np.array(w, copy=True) for w in arrays] for name, arrays in self.get_weights().items()}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.components):
            for array in self.components[name].get_weights():
                digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()
