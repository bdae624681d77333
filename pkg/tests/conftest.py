"""
Test configuration and fixtures for semdrive
"""

import numpy as np
import pytest
import tensorflow as tf

from semdrive.env.simulator import DrivingSimulator, Termination
from semdrive.replay.buffer import SequenceBatch
from semdrive.replay.storage import Episode, TransitionRecord
from semdrive.utils.config import EnvConfig, RunConfig


@pytest.fixture
def tiny_config(tmp_path):
    """Miniature run configuration writing into a temporary run directory"""
    return RunConfig.tiny(schedule={"run_dir": str(tmp_path / "run")})


@pytest.fixture
def double_config():
    """Double-precision, smooth-latent, eager configuration for finite-difference checks"""
    return RunConfig.tiny(
        env={"image_size": 8},
        model={
            "deter_size": 6, "stoch_groups": 2, "stoch_classes": 3, "filter_size": 5,
            "hidden_size": 8, "cnn_depth": 2, "dtype": "float64", "latent_mode": "mean",
            "use_tf_function": False,
        },
        replay={"batch_size": 2, "sequence_length": 3},
        behavior={"hidden_size": 8, "horizon": 3},
    )


@pytest.fixture
def env_config():
    return EnvConfig(layout="loop", image_size=32, pixels_per_meter=1.0, max_episode_steps=200)


@pytest.fixture
def simulator(env_config):
    """Simulator with the built-in layouts"""
    return DrivingSimulator(env_config)


def make_episode(
    length: int,
    termination: Termination = Termination.TIMEOUT,
    episode_id: int = 0,
    image_size: int = 8,
    start_step: int = 0,
) -> Episode:
    """Synthetic episode whose pixel values encode (episode_id, step) for contiguity checks"""
    records = []
    for t in range(length):
        step = start_step + t
        pixels = np.full((image_size, image_size, 3), (episode_id * 7 + step) % 256, dtype=np.uint8)
        records.append(
            TransitionRecord(
                observation=pixels,
                mask=255 - pixels,
                action=np.array([0.01 * step, -0.01 * step], dtype=np.float32),
                reward=float(step),
                termination=termination if t == length - 1 else Termination.NONE,
                episode_id=episode_id,
                step_index=step,
            )
        )
    return Episode.from_records(records, layout="loop", seed=episode_id, weather="clear")


@pytest.fixture
def episode_factory():
    """Factory for synthetic episodes"""
    return make_episode


def random_batch(config, seed=0, batch_size=None, length=None):
    """SequenceBatch of random pixels, actions and rewards shaped for `config`"""
    rng = np.random.default_rng(seed)
    b = batch_size or config.replay.batch_size
    l = length or config.replay.sequence_length
    size = config.env.image_size
    masks = (rng.random((b, l, size, size, 3)) > 0.7).astype(np.uint8) * 255
    return SequenceBatch(
        observations=rng.integers(0, 256, (b, l, size, size, 3), dtype=np.uint8),
        masks=masks,
        actions=rng.uniform(-1.0, 1.0, (b, l, 2)).astype(np.float32),
        rewards=rng.normal(0.0, 1.0, (b, l)).astype(np.float32),
        terminations=np.zeros((b, l), dtype=np.int8),
        episode_ids=np.arange(b, dtype=np.int64),
        step_indices=np.tile(np.arange(l, dtype=np.int64), (b, 1)),
        sources=[],
    )


def finite_difference_check(loss_fn, variables, entries_per_variable=2, eps=1e-5, seed=0):
    """Compare tape gradients with central differences on sampled parameter entries"""
    with tf.GradientTape() as tape:
        loss = loss_fn()
    gradients = tape.gradient(loss, variables)
    rng = np.random.default_rng(seed)
    checked = 0
    for variable, gradient in zip(variables, gradients):
        assert gradient is not None, f"no gradient for {variable.name}"
        flat_grad = tf.reshape(tf.convert_to_tensor(gradient), [-1]).numpy()
        original = variable.numpy().copy()
        for index in rng.choice(original.size, size=min(entries_per_variable, original.size), replace=False):
            position = np.unravel_index(index, original.shape)
            values = []
            for sign in (1.0, -1.0):
                perturbed = original.copy()
                perturbed[position] += sign * eps
                variable.assign(perturbed)
                values.append(float(loss_fn().numpy()))
            variable.assign(original)
            numeric = (values[0] - values[1]) / (2.0 * eps)
            analytic = float(flat_grad[index])
            tolerance = 1e-4 * max(abs(analytic), abs(numeric)) + 1e-6
            assert abs(analytic - numeric) <= tolerance, (variable.name, analytic, numeric)
            checked += 1
    return checked


