"""
Tests for TD-lambda targets and actor-critic learning in imagination
"""

from unittest.mock import patch

import numpy as np
import pytest
import tensorflow as tf

from semdrive.behavior.actor_critic import (
    ActionDistribution,
    ActorCritic,
    ImaginedTrajectory,
    actor_loss,
    critic_loss,
)
from semdrive.behavior.returns import TDLambdaTargets, td_lambda
from semdrive.env.vehicle import ACTION_BOUNDS
from semdrive.models.world_model import WorldModel
from semdrive.utils.errors import ArgumentError
from tests.conftest import finite_difference_check, random_batch


def brute_force_lambda_return(rewards, values, gamma, lam):
    """Weighted average of n-step returns, computed without recursion"""
    horizon = len(rewards)
    targets = []
    for t in range(horizon):
        remaining = horizon - t

        def n_step(n):
            ret = sum(gamma ** k * rewards[t + k] for k in range(n))
            return ret + gamma ** n * values[t + n]

        total = sum((1 - lam) * lam ** (n - 1) * n_step(n) for n in range(1, remaining))
        targets.append(total + lam ** (remaining - 1) * n_step(remaining))
    return np.array(targets)


def start_states(model, config, seed=0):
    """Posterior states of a random batch, as handed over by world-model training"""
    batch = random_batch(config, seed=seed)
    states, _, _ = model.observe(*[model._batch_tensors(batch)[i] for i in (0, 2)])
    return states.stop_gradient()


@pytest.mark.unit
class TestTDLambda:
    """Test the TD-lambda recursion"""

    def test_matches_brute_force(self):
        """Test the recursion against n-step averages on random instances"""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            horizon = int(rng.integers(1, 7))
            rewards = rng.normal(size=horizon)
            values = rng.normal(size=horizon + 1)
            gamma = float(rng.uniform(0.5, 1.0))
            lam = float(rng.uniform(0.0, 1.0))
            result = td_lambda(tf.constant(rewards), tf.constant(values), gamma, lam)
            np.testing.assert_allclose(
                result.values.numpy(), brute_force_lambda_return(rewards, values, gamma, lam), atol=1e-6
            )

    def test_lambda_extremes(self):
        """Test lambda 0 gives one-step targets and lambda 1 gives Monte Carlo returns"""
        rewards = tf.constant([1.0, 2.0, 3.0], dtype=tf.float64)
        values = tf.constant([0.5, 1.5, 2.5, 4.0], dtype=tf.float64)
        one_step = td_lambda(rewards, values, 0.9, 0.0).values.numpy()
        np.testing.assert_allclose(one_step, [1.0 + 0.9 * 1.5, 2.0 + 0.9 * 2.5, 3.0 + 0.9 * 4.0])
        monte_carlo = td_lambda(rewards, values, 0.9, 1.0).values.numpy()
        np.testing.assert_allclose(monte_carlo[0], 1.0 + 0.9 * 2.0 + 0.81 * 3.0 + 0.729 * 4.0)

    def test_batched_shapes(self):
        """Test trailing batch dimensions are preserved"""
        result = td_lambda(tf.zeros([4, 3, 2]), tf.ones([5, 3, 2]), 0.99, 0.95)
        assert isinstance(result, TDLambdaTargets)
        assert result.values.shape == (4, 3, 2)

    def test_per_step_discounts(self):
        """Test a tensor of discounts is honoured step by step"""
        rewards = tf.constant([1.0, 1.0], dtype=tf.float64)
        values = tf.constant([0.0, 0.0, 10.0], dtype=tf.float64)
        discounts = tf.constant([1.0, 0.0], dtype=tf.float64)
        np.testing.assert_allclose(td_lambda(rewards, values, discounts, 1.0).values.numpy(), [2.0, 1.0])

    def test_invalid_arguments(self):
        """Test length mismatches and out-of-range parameters are rejected"""
        with pytest.raises(ArgumentError):
            td_lambda(tf.zeros([3]), tf.zeros([3]), 0.99, 0.95)
        with pytest.raises(ArgumentError):
            td_lambda(tf.zeros([3]), tf.zeros([4]), 0.99, 1.5)
        with pytest.raises(ArgumentError):
            td_lambda(tf.zeros([3]), tf.zeros([4]), -0.1, 0.95)


@pytest.mark.unit
class TestActionDistribution:
    """Test the squashed Gaussian policy distribution"""

    def test_actions_within_bounds(self):
        """Test squashed samples never leave the action bounds"""
        dist = ActionDistribution(mean=tf.constant([[5.0, -5.0]] * 100), std=tf.ones([100, 2]) * 3.0)
        action, _ = dist.sample(tf.random.stateless_normal([100, 2], seed=[0, 1]))
        assert np.all(np.abs(action.numpy()) <= np.array(ACTION_BOUNDS) + 1e-6)

    def test_entropy_formula(self):
        """Test the entropy equals Gaussian entropy plus the log-Jacobian of the scaled tanh"""
        mean = tf.constant([[0.3, -0.7]], dtype=tf.float64)
        std = tf.constant([[0.5, 1.2]], dtype=tf.float64)
        pre = tf.constant([[0.1, 1.4]], dtype=tf.float64)
        dist = ActionDistribution(mean=mean, std=std)
        bounds = np.array(ACTION_BOUNDS)
        gaussian = 0.5 * np.log(2 * np.pi * np.e * std.numpy() ** 2)
        jacobian = np.log(bounds * (1 - np.tanh(pre.numpy()) ** 2))
        np.testing.assert_allclose(dist.entropy(pre).numpy(), (gaussian + jacobian).sum(axis=-1), rtol=1e-10)

    def test_mode(self):
        """Test the mode squashes the mean"""
        dist = ActionDistribution(mean=tf.constant([[0.2, -0.4]]), std=tf.ones([1, 2]))
        np.testing.assert_allclose(dist.mode().numpy(), np.tanh([[0.2, -0.4]]) * ACTION_BOUNDS, rtol=1e-6)


@pytest.mark.unit
class TestLosses:
    """Test the actor and critic objectives"""

    def make_trajectory(self):
        rewards = tf.constant([[1.0, 0.0], [0.5, 2.0]])
        return ImaginedTrajectory(
            states=None,
            filtered=tf.zeros([3, 2, 4]),
            actions=tf.zeros([2, 2, 2]),
            rewards=rewards,
            values=tf.constant([[1.0, 1.0], [2.0, 0.0], [0.0, 3.0]]),
            discounts=tf.ones_like(rewards) * 0.9,
            entropies=tf.constant([[0.5, 1.5], [1.0, 1.0]]),
        )

    def test_critic_loss(self):
        """Test the critic regresses v(s_0 .. s_{I-1}) onto the targets"""
        traj = self.make_trajectory()
        targets = TDLambdaTargets(values=tf.constant([[0.0, 1.0], [2.0, 2.0]]), lam=0.95)
        expected = 0.5 * np.mean([1.0, 0.0, 0.0, 4.0])
        assert float(critic_loss(traj, targets)) == pytest.approx(expected)

    def test_critic_gradient_blocked_at_targets(self):
        """Test the critic update moves v(s_0 .. s_{I-1}) only, never the targets or the bootstrap value"""
        traj = self.make_trajectory()
        values = tf.Variable(traj.values)
        target_values = tf.Variable([[0.0, 1.0], [2.0, 2.0]])
        with tf.GradientTape(persistent=True) as tape:
            loss = critic_loss(traj._replace(values=values), TDLambdaTargets(values=target_values, lam=0.95))
        target_grad = tape.gradient(loss, target_values, unconnected_gradients=tf.UnconnectedGradients.ZERO)
        np.testing.assert_array_equal(target_grad.numpy(), np.zeros((2, 2)))
        value_grad = tape.gradient(loss, values).numpy()
        expected = (traj.values.numpy()[:-1] - target_values.numpy()) / 4.0
        np.testing.assert_allclose(value_grad[:-1], expected, rtol=1e-6)
        np.testing.assert_array_equal(value_grad[-1], [0.0, 0.0])

    @pytest.mark.parametrize("entropies", [[[0.5, 1.5], [1.0, 1.0]], [[-0.5, -1.5], [-1.0, -1.0]]])
    def test_entropy_term_monotone_in_eta(self, entropies):
        """Test raising eta lowers the loss when entropy is positive and raises it when negative"""
        traj = self.make_trajectory()._replace(entropies=tf.constant(entropies))
        targets = TDLambdaTargets(values=tf.constant([[1.0, 3.0], [2.0, 2.0]]), lam=0.95)
        etas = [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0]
        losses = np.array([float(actor_loss(traj, targets, eta)) for eta in etas])
        mean_entropy = float(np.mean(entropies))
        np.testing.assert_allclose(losses, -2.0 - mean_entropy * np.array(etas), rtol=1e-6)
        steps = np.diff(losses)
        assert np.all(steps < 0) if mean_entropy > 0 else np.all(steps > 0)

    def test_actor_loss(self):
        """Test the actor maximizes targets plus eta-weighted entropy"""
        traj = self.make_trajectory()
        targets = TDLambdaTargets(values=tf.constant([[1.0, 3.0], [2.0, 2.0]]), lam=0.95)
        assert float(actor_loss(traj, targets, 0.1)) == pytest.approx(-2.0 - 0.1 * 1.0)

    def test_negative_eta_rejected(self):
        """Test the entropy weight must be non-negative"""
        traj = self.make_trajectory()
        with pytest.raises(ArgumentError):
            actor_loss(traj, TDLambdaTargets(values=tf.zeros([2, 2]), lam=0.95), -1.0)


@pytest.mark.unit
class TestImagination:
    """Test imagined rollouts"""

    def test_trajectory_shapes(self, tiny_config):
        """Test rollout tensors are time-major with I or I+1 steps"""
        model = WorldModel(tiny_config)
        behavior = ActorCritic(model, tiny_config.behavior)
        starts = start_states(model, tiny_config)
        n = tiny_config.replay.batch_size * tiny_config.replay.sequence_length
        traj = behavior.imagine(starts, 4)
        assert traj.horizon == 4
        assert traj.actions.shape == (4, n, 2)
        assert traj.rewards.shape == (4, n)
        assert traj.values.shape == (5, n)
        assert traj.filtered.shape == (5, n, model.feature_size)
        assert traj.states.h.shape == (5, n, tiny_config.model.deter_size)

    def test_no_observations_consumed(self, tiny_config):
        """Test imagination never calls the encoder"""
        model = WorldModel(tiny_config)
        behavior = ActorCritic(model, tiny_config.behavior)
        starts = start_states(model, tiny_config)
        with patch.object(model, "encode", side_effect=AssertionError("encoder used")):
            behavior.imagine(starts, 3)

    def test_constant_policy_override(self, tiny_config):
        """Test a supplied policy replaces the actor"""
        model = WorldModel(tiny_config)
        behavior = ActorCritic(model, tiny_config.behavior)
        starts = start_states(model, tiny_config)
        traj = behavior.imagine(starts, 3, policy=lambda features: tf.ones([features.shape[0], 2]) * 0.25)
        np.testing.assert_allclose(traj.actions.numpy(), 0.25)
        np.testing.assert_array_equal(traj.entropies.numpy(), 0.0)

    def test_invalid_horizon(self, tiny_config):
        """Test a horizon below 1 is rejected"""
        model = WorldModel(tiny_config)
        behavior = ActorCritic(model, tiny_config.behavior)
        with pytest.raises(ArgumentError):
            behavior.imagine(model.initial_state(2), 0)


@pytest.mark.unit
class TestBehaviorTraining:
    """Test actor-critic updates"""

    def test_train_step_leaves_world_model_unchanged(self, tiny_config):
        """Test behavior learning never updates world-model parameters"""
        model = WorldModel(tiny_config)
        behavior = ActorCritic(model, tiny_config.behavior)
        starts = start_states(model, tiny_config)
        before_model = model.checksum()
        before_actor = [w.copy() for w in behavior.actor.get_weights()]
        metrics = behavior.train_step(starts)
        assert model.checksum() == before_model
        assert any(not np.array_equal(a, b) for a, b in zip(before_actor, behavior.actor.get_weights()))
        assert set(metrics.as_dict()) == {"actor_loss", "critic_loss", "entropy", "imagined_reward", "target_value"}

    def test_act(self, tiny_config):
        """Test greedy actions are the mode and sampled actions stay within bounds"""
        model = WorldModel(tiny_config)
        behavior = ActorCritic(model, tiny_config.behavior)
        features = tf.random.stateless_normal([6, model.feature_size], seed=[2, 3])
        greedy = behavior.act(features, greedy=True)
        np.testing.assert_allclose(greedy, behavior.actor.distribution(features).mode().numpy(), rtol=1e-6)
        rng = np.random.default_rng(0)
        sampled = behavior.act(
            features, noise=rng.standard_normal((6, 2)), expl_std=5.0, expl_noise=rng.standard_normal((6, 2))
        )
        assert sampled.shape == (6, 2)
        assert sampled.dtype == np.float32
        assert np.all(np.abs(sampled) <= np.array(ACTION_BOUNDS, dtype=np.float32) + 1e-6)

    def test_weight_round_trip(self, tiny_config):
        """Test actor and critic weights transfer between instances"""
        model = WorldModel(tiny_config)
        source = ActorCritic(model, tiny_config.behavior, seed=1)
        target = ActorCritic(model, tiny_config.behavior, seed=2)
        target.set_weights(source.get_weights())
        for a, b in zip(source.critic.get_weights(), target.critic.get_weights()):
            np.testing.assert_array_equal(a, b)


@pytest.mark.slow
class TestBehaviorGradients:
    """Test behavior gradients against central finite differences in double precision"""

    def test_critic_gradients(self, double_config):
        """Test critic-loss gradients with respect to the critic parameters"""
        model = WorldModel(double_config)
        behavior = ActorCritic(model, double_config.behavior)
        starts = start_states(model, double_config)
        behavior.reseed(0)
        traj = behavior.imagine(starts, double_config.behavior.horizon)
        targets = behavior.targets(traj)
        filtered = tf.stop_gradient(traj.filtered)

        def loss_fn():
            return critic_loss(traj._replace(values=behavior.critic(filtered)), targets)

        finite_difference_check(loss_fn, behavior.critic.trainable_variables, entries_per_variable=3)

    def test_actor_gradients(self, double_config):
        """Test actor-loss gradients, which flow back through the imagined dynamics"""
        model = WorldModel(double_config)
        behavior = ActorCritic(model, double_config.behavior)
        starts = start_states(model, double_config)
        eta = double_config.behavior.eta

        def loss_fn():
            behavior.reseed(0)
            traj = behavior.imagine(starts, double_config.behavior.horizon)
            return actor_loss(traj, behavior.targets(traj), eta)

        finite_difference_check(loss_fn, behavior.actor.trainable_variables, entries_per_variable=3)
