"""
Recurrent state-space model with a categorical stochastic state and straight-through sampling
"""

import logging
from typing import NamedTuple, Tuple

import tensorflow as tf

from ..utils.errors import ArgumentError
from .networks import mlp

logger = logging.getLogger(__name__)

keras = tf.keras


class LatentState(NamedTuple):
    """Deterministic recurrent state h (..., D_h) and categorical state z (..., G, C)"""

    h: tf.Tensor
    z: tf.Tensor

    def flat_z(self) -> tf.Tensor:
        groups, classes = self.z.shape[-2], self.z.shape[-1]
        return tf.reshape(self.z, tf.concat([tf.shape(self.z)[:-2], [groups * classes]], axis=0))

    def concat(self) -> tf.Tensor:
        return tf.concat([self.h, self.flat_z()], axis=-1)

    def flatten(self) -> "LatentState":
        """Merge all leading dimensions into one batch dimension"""
        return LatentState(
            h=tf.reshape(self.h, [-1, self.h.shape[-1]]),
            z=tf.reshape(self.z, [-1, self.z.shape[-2], self.z.shape[-1]]),
        )

    def stop_gradient(self) -> "LatentState":
        return LatentState(tf.stop_gradient(self.h), tf.stop_gradient(self.z))


class StateDistribution(NamedTuple):
    """G independent categorical distributions over C classes"""

    logits: tf.Tensor

    def probs(self) -> tf.Tensor:
        return tf.nn.softmax(self.logits, axis=-1)

    def log_probs(self) -> tf.Tensor:
        return tf.nn.log_softmax(self.logits, axis=-1)

    def entropy(self) -> tf.Tensor:
        return -tf.reduce_sum(self.probs() * self.log_probs(), axis=[-2, -1])


def kl_divergence(q: StateDistribution, p: StateDistribution) -> tf.Tensor:
    """KL(q || p) summed over groups and classes"""
    return tf.reduce_sum(q.probs() * (q.log_probs() - p.log_probs()), axis=[-2, -1])


@tf.custom_gradient
def _pass_through(one_hot: tf.Tensor, probs: tf.Tensor):
    def grad(upstream):
        return tf.zeros_like(upstream), upstream

    return tf.identity(one_hot), grad


def straight_through_sample(logits: tf.Tensor, seed: tf.Tensor) -> tf.Tensor:
    """
    Draw one-hot samples per group; gradients flow to the softmax probabilities

    Args:
        logits: (..., G, C) logits
        seed: Shape [2] integer seed for stateless sampling

    Returns:
        One-hot tensor shaped like logits
    """
    classes = logits.shape[-1]
    flat = tf.reshape(logits, [-1, classes])
    index = tf.random.stateless_categorical(flat, 1, seed=seed)[:, 0]
    one_hot = tf.reshape(tf.one_hot(index, classes, dtype=logits.dtype), tf.shape(logits))
    return _pass_through(one_hot, tf.nn.softmax(logits, axis=-1))


class RSSM(keras.Model):
    """
    Recurrent model, representation model and transition predictor

    h_t = GRU(h_{t-1}, [z_{t-1}, a_{t-1}]); the prior reads h_t alone and the
    posterior reads h_t with the image embedding.
    """

    def __init__(
        self,
        deter_size: int,
        stoch_groups: int,
        stoch_classes: int,
        hidden_size: int,
        action_size: int = 2,
        latent_mode: str = "sample",
        dtype: str = "float32",
        name: str = "rssm",
    ):
        super().__init__(name=name, dtype=dtype)
        self.deter_size = deter_size
        self.stoch_groups = stoch_groups
        self.stoch_classes = stoch_classes
        self.action_size = action_size
        self.latent_mode = latent_mode

        self.input_layer = keras.layers.Dense(hidden_size, activation="elu", dtype=dtype, name="rssm_input")
        self.cell = keras.layers.GRUCell(deter_size, dtype=dtype, name="rssm_gru")
        self.prior_net = mlp([hidden_size], stoch_groups * stoch_classes, dtype=dtype, name="prior")
        self.posterior_net = mlp([hidden_size], stoch_groups * stoch_classes, dtype=dtype, name="posterior")

    def initial_state(self, batch_size: int) -> LatentState:
        if batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
        return LatentState(
            h=tf.zeros([batch_size, self.deter_size], dtype=self.dtype),
            z=tf.zeros([batch_size, self.stoch_groups, self.stoch_classes], dtype=self.dtype),
        )

    def _check(self, prev: LatentState, action: tf.Tensor) -> None:
        if prev.h.shape[-1] != self.deter_size:
            raise ArgumentError(f"h has width {prev.h.shape[-1]}, expected {self.deter_size}")
        if tuple(prev.z.shape[-2:]) != (self.stoch_groups, self.stoch_classes):
            raise ArgumentError(
                f"z has shape {tuple(prev.z.shape[-2:])}, expected {(self.stoch_groups, self.stoch_classes)}"
            )
        if action.shape[-1] != self.action_size:
            raise ArgumentError(f"action has width {action.shape[-1]}, expected {self.action_size}")
        batch, action_batch = prev.h.shape[0], action.shape[0]
        if batch is not None and action_batch is not None and batch != action_batch:
            raise ArgumentError(f"batch mismatch: state {batch}, action {action_batch}")

    def _distribution(self, network: keras.Model, inputs: tf.Tensor) -> StateDistribution:
        logits = network(inputs)
        return StateDistribution(tf.reshape(logits, [-1, self.stoch_groups, self.stoch_classes]))

    def recurrent(self, prev: LatentState, action: tf.Tensor) -> tf.Tensor:
        action = tf.cast(action, self.dtype)
        self._check(prev, action)
        x = self.input_layer(tf.concat([prev.flat_z(), action], axis=-1))
        h, _ = self.cell(x, [prev.h])
        return h

    def prior(self, h: tf.Tensor) -> StateDistribution:
        return self._distribution(self.prior_net, h)

    def posterior(self, h: tf.Tensor, embed: tf.Tensor) -> StateDistribution:
        return self._distribution(self.posterior_net, tf.concat([h, tf.cast(embed, self.dtype)], axis=-1))

    def latent(self, dist: StateDistribution, seed: tf.Tensor) -> tf.Tensor:
        if self.latent_mode == "mean":
            return dist.probs()
        return straight_through_sample(dist.logits, seed)

    def observe_step(
        self, prev: LatentState, prev_action: tf.Tensor, embed: tf.Tensor, seed: tf.Tensor
    ) -> Tuple[LatentState, StateDistribution, StateDistribution]:
        h = self.recurrent(prev, prev_action)
        prior = self.prior(h)
        posterior = self.posterior(h, embed)
        return LatentState(h, self.latent(posterior, seed)), posterior, prior

    def imagine_step(
        self, prev: LatentState, action: tf.Tensor, seed: tf.Tensor
    ) -> Tuple[LatentState, StateDistribution]:
        h = self.recurrent(prev, action)
        prior = self.prior(h)
        return LatentState(h, self.latent(prior, seed)), prior
