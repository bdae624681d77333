"""
TD-lambda value targets over imagined trajectories
"""

from typing import NamedTuple, Union

import tensorflow as tf

from ..utils.errors import ArgumentError


class TDLambdaTargets(NamedTuple):
    """Time-major targets V_t for t = 0 .. I-1 and the lambda they were built with"""

    values: tf.Tensor
    lam: float


def td_lambda(
    rewards: tf.Tensor,
    values: tf.Tensor,
    gamma: Union[float, tf.Tensor],
    lam: float,
) -> TDLambdaTargets:
    """
    Backward recursion V_t = r_t + gamma_t * ((1 - lam) * v_{t+1} + lam * V_{t+1}) with V_I = v_I

    Args:
        rewards: (I, ...) predicted rewards, r_t earned on the transition t -> t+1
        values: (I+1, ...) critic values v(s_0) .. v(s_I)
        gamma: Scalar discount or (I, ...) per-step discounts
        lam: Mixing weight in [0, 1]

    Returns:
        TDLambdaTargets with values of shape (I, ...)

    Raises:
        ArgumentError: If len(values) != len(rewards) + 1 or gamma/lam are outside [0, 1]
    """
    rewards = tf.convert_to_tensor(rewards)
    values = tf.cast(tf.convert_to_tensor(values), rewards.dtype)
    horizon = rewards.shape[0]
    if horizon is None or values.shape[0] != horizon + 1:
        raise ArgumentError(f"values must have one more step than rewards: {values.shape[0]} vs {horizon}")
    if not 0.0 <= lam <= 1.0:
        raise ArgumentError(f"lam must be within [0, 1], got {lam}")
    if isinstance(gamma, (int, float)) and not 0.0 <= gamma <= 1.0:
        raise ArgumentError(f"gamma must be within [0, 1], got {gamma}")

    discounts = tf.cast(gamma, rewards.dtype) * tf.ones_like(rewards)
    target = values[horizon]
    targets = []
    for t in reversed(range(horizon)):
        target = rewards[t] + discounts[t] * ((1.0 - lam) * values[t + 1] + lam * target)
        targets.append(target)
    return TDLambdaTargets(values=tf.stack(targets[::-1], axis=0), lam=lam)
