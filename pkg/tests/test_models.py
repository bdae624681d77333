"""
Tests for the latent world model
Covers KL and straight-through helpers, the recurrent state-space model, the joint loss,
finite-difference gradient checks and weight handling
"""

from unittest.mock import patch

import numpy as np
import pytest
import tensorflow as tf

from semdrive.models.rssm import RSSM, LatentState, StateDistribution, kl_divergence, straight_through_sample
from semdrive.models.world_model import WorldModel
from semdrive.utils.errors import ArgumentError, NumericalError, ProtocolError
from tests.conftest import finite_difference_check, random_batch


@pytest.mark.unit
class TestKLDivergence:
    """Test the categorical KL helper"""

    def test_non_negative(self):
        """Test KL is never negative"""
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = StateDistribution(tf.constant(rng.normal(0, 3, (4, 5, 6)), dtype=tf.float64))
            p = StateDistribution(tf.constant(rng.normal(0, 3, (4, 5, 6)), dtype=tf.float64))
            assert tf.reduce_min(kl_divergence(q, p)).numpy() >= -1e-6

    def test_self_divergence_is_zero(self):
        """Test KL(q || q) vanishes"""
        q = StateDistribution(tf.constant(np.random.default_rng(1).normal(0, 2, (3, 4, 5)), dtype=tf.float64))
        np.testing.assert_allclose(kl_divergence(q, q).numpy(), 0.0, atol=1e-8)

    def test_sums_over_groups(self):
        """Test the result has one value per batch entry"""
        q = StateDistribution(tf.zeros([7, 2, 3]))
        assert kl_divergence(q, q).shape == (7,)

    def test_matches_numpy_reference(self):
        """Test against sum q (log q - log p) computed in numpy"""
        rng = np.random.default_rng(2)
        q_logits = rng.normal(0, 2, (6, 4, 5))
        p_logits = rng.normal(0, 2, (6, 4, 5))

        def log_softmax(logits):
            shifted = logits - logits.max(axis=-1, keepdims=True)
            return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

        log_q, log_p = log_softmax(q_logits), log_softmax(p_logits)
        expected = (np.exp(log_q) * (log_q - log_p)).sum(axis=(-2, -1))
        actual = kl_divergence(
            StateDistribution(tf.constant(q_logits, tf.float64)), StateDistribution(tf.constant(p_logits, tf.float64))
        )
        np.testing.assert_allclose(actual.numpy(), expected, rtol=0, atol=1e-8)


@pytest.mark.unit
class TestKLTerms:
    """Test the reported KL and the penalty that enters the loss"""

    def kl_gradients(self, config, seed=0):
        rng = np.random.default_rng(seed)
        posterior_logits = tf.Variable(rng.normal(0, 1.5, (3, 4, 5)), dtype=tf.float64)
        prior_logits = tf.Variable(rng.normal(0, 1.5, (3, 4, 5)), dtype=tf.float64)
        model = WorldModel(config)
        with tf.GradientTape() as tape:
            kl, penalty = model._kl_terms(StateDistribution(posterior_logits), StateDistribution(prior_logits))
            total = tf.reduce_sum(penalty)
        posterior_grad, prior_grad = tape.gradient(total, [posterior_logits, prior_logits])
        return kl.numpy(), penalty.numpy(), posterior_grad.numpy(), prior_grad.numpy()

    def test_balancing_keeps_value_and_splits_gradients(self, tiny_config):
        """Test balancing leaves the penalty value unchanged and scales prior/posterior gradients by 0.8/0.2"""
        plain = self.kl_gradients(tiny_config.with_overrides({"model.kl_balancing": False}))
        balanced = self.kl_gradients(
            tiny_config.with_overrides({"model.kl_balancing": True, "model.kl_balance": 0.8})
        )
        np.testing.assert_allclose(balanced[0], plain[0], rtol=1e-12)
        np.testing.assert_allclose(balanced[1], plain[1], rtol=1e-12)
        np.testing.assert_allclose(balanced[1], balanced[0], rtol=1e-12)
        np.testing.assert_allclose(balanced[2], 0.2 * plain[2], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(balanced[3], 0.8 * plain[3], rtol=1e-9, atol=1e-12)

    def test_free_nats_clip_penalty_only(self, tiny_config):
        """Test entries below the free-nats floor are lifted and carry no gradient"""
        kl, penalty, posterior_grad, prior_grad = self.kl_gradients(
            tiny_config.with_overrides({"model.free_nats": 1000.0})
        )
        np.testing.assert_array_equal(penalty, 1000.0)
        assert np.all(kl < 1000.0)
        np.testing.assert_array_equal(posterior_grad, 0.0)
        np.testing.assert_array_equal(prior_grad, 0.0)


@pytest.mark.unit
class TestStraightThrough:
    """Test one-hot sampling with pass-through gradients"""

    def test_forward_is_one_hot(self):
        """Test samples are exactly one-hot per group"""
        logits = tf.constant(np.random.default_rng(0).normal(size=(5, 4, 3)))
        sample = straight_through_sample(logits, tf.constant([1, 2], dtype=tf.int64)).numpy()
        assert set(np.unique(sample)) <= {0.0, 1.0}
        np.testing.assert_array_equal(sample.sum(axis=-1), 1.0)

    def test_gradient_matches_softmax_path(self):
        """Test the gradient equals the gradient through the softmax probabilities on a 2 x 3 toy"""
        logits = tf.Variable([[0.3, -1.2, 0.8], [1.5, 0.1, -0.4]], dtype=tf.float64)
        weights = tf.constant([[1.0, 2.0, -3.0], [0.5, -1.0, 4.0]], dtype=tf.float64)
        with tf.GradientTape() as tape:
            sampled = tf.reduce_sum(weights * straight_through_sample(logits, tf.constant([3, 4], dtype=tf.int64)))
        with tf.GradientTape() as reference_tape:
            relaxed = tf.reduce_sum(weights * tf.nn.softmax(logits, axis=-1))
        np.testing.assert_allclose(
            tape.gradient(sampled, logits).numpy(), reference_tape.gradient(relaxed, logits).numpy(), atol=1e-6
        )

    def test_sampling_is_seeded(self):
        """Test identical seeds give identical samples"""
        logits = tf.constant(np.random.default_rng(2).normal(size=(16, 4, 5)))
        seed = tf.constant([9, 9], dtype=tf.int64)
        np.testing.assert_array_equal(
            straight_through_sample(logits, seed).numpy(), straight_through_sample(logits, seed).numpy()
        )

    def test_sample_frequencies_follow_probabilities(self):
        """Test empirical class frequencies approach the softmax probabilities"""
        logits = tf.constant(np.tile([[[0.0, 1.0, 2.0]]], (20_000, 1, 1)))
        sample = straight_through_sample(logits, tf.constant([5, 6], dtype=tf.int64)).numpy()
        expected = tf.nn.softmax(tf.constant([0.0, 1.0, 2.0], dtype=tf.float64)).numpy()
        np.testing.assert_allclose(sample.mean(axis=(0, 1)), expected, atol=0.02)


@pytest.mark.unit
class TestRSSM:
    """Test the recurrent state-space model"""

    def test_initial_state(self):
        """Test the initial state is zero with the configured shapes"""
        rssm = RSSM(6, 2, 3, 8)
        state = rssm.initial_state(4)
        assert state.h.shape == (4, 6)
        assert state.z.shape == (4, 2, 3)
        assert not np.any(state.h.numpy())
        with pytest.raises(ArgumentError):
            rssm.initial_state(0)

    def test_shape_errors(self):
        """Test mismatched action widths and batches are rejected"""
        rssm = RSSM(6, 2, 3, 8)
        state = rssm.initial_state(2)
        with pytest.raises(ArgumentError):
            rssm.imagine_step(state, tf.zeros([2, 3]), tf.constant([0, 0], dtype=tf.int64))
        with pytest.raises(ArgumentError):
            rssm.imagine_step(state, tf.zeros([3, 2]), tf.constant([0, 0], dtype=tf.int64))

    def test_sample_mode_gives_one_hot_latents(self):
        """Test sampled latents are one-hot and mean-mode latents are probabilities"""
        seed = tf.constant([1, 1], dtype=tf.int64)
        sample_rssm = RSSM(6, 2, 3, 8)
        sample_state, _ = sample_rssm.imagine_step(sample_rssm.initial_state(2), tf.zeros([2, 2]), seed)
        np.testing.assert_array_equal(sample_state.z.numpy().sum(axis=-1), 1.0)
        assert set(np.unique(sample_state.z.numpy())) <= {0.0, 1.0}

        mean_rssm = RSSM(6, 2, 3, 8, latent_mode="mean")
        mean_state, prior = mean_rssm.imagine_step(mean_rssm.initial_state(2), tf.zeros([2, 2]), seed)
        np.testing.assert_allclose(mean_state.z.numpy(), prior.probs().numpy())

    def test_latent_state_helpers(self):
        """Test flattening and concatenation of latent states"""
        state = LatentState(tf.ones([2, 3, 4]), tf.ones([2, 3, 5, 6]))
        flat = state.flatten()
        assert flat.h.shape == (6, 4)
        assert flat.z.shape == (6, 5, 6)
        assert flat.concat().shape == (6, 34)


@pytest.mark.unit
class TestWorldModelWiring:
    """Test variant wiring and head inputs"""

    def test_sem2_components(self, tiny_config):
        """Test the full model builds the filter and the mask decoder"""
        model = WorldModel(tiny_config)
        assert set(model.components) == {"encoder", "rssm", "obs_decoder", "reward_head", "filter", "mask_decoder"}
        assert model.feature_size == tiny_config.model.filter_size

    def test_no_filter_components(self, tiny_config):
        """Test the baseline builds neither filter nor mask decoder"""
        model = WorldModel(tiny_config.with_overrides({"variant": "no_filter"}))
        assert "filter" not in model.components
        assert "mask_decoder" not in model.components
        cfg = tiny_config.model
        assert model.feature_size == cfg.deter_size + cfg.stoch_groups * cfg.stoch_classes
        state = model.initial_state(1)
        with pytest.raises(ProtocolError):
            model.filter(state)
        with pytest.raises(ProtocolError):
            model.predict_mask(tf.zeros([1, cfg.filter_size]))
        np.testing.assert_array_equal(model.features(state).numpy(), state.concat().numpy())

    def test_heads_read_only_the_filtered_feature(self, tiny_config):
        """Test mask and reward heads consume the filter output, not (h, z)"""
        model = WorldModel(tiny_config)
        filter_size = tiny_config.model.filter_size
        assert model.components["reward_head"].layers[0].kernel.shape[0] == filter_size
        assert model.components["mask_decoder"].network.layers[0].kernel.shape[0] == filter_size

    def test_heads_invariant_to_state_given_filter_output(self, tiny_config):
        """Test two different latent states with the same filter output give identical mask and reward predictions"""
        model = WorldModel(tiny_config)
        cfg = tiny_config.model
        first_layer = model.components["filter"].layers[0]
        kernel, bias = first_layer.get_weights()
        kernel[: cfg.deter_size] = 0.0
        first_layer.set_weights([kernel, bias])

        rng = np.random.default_rng(0)
        first = LatentState(
            tf.constant(rng.normal(size=(1, cfg.deter_size)), tf.float32),
            tf.one_hot(rng.integers(cfg.stoch_classes, size=(1, cfg.stoch_groups)), cfg.stoch_classes),
        )
        second = LatentState(first.h + tf.constant(rng.normal(size=(1, cfg.deter_size)), tf.float32), first.z)
        assert not np.allclose(first.concat().numpy(), second.concat().numpy())

        s_first, s_second = model.features(first), model.features(second)
        np.testing.assert_array_equal(s_first.numpy(), s_second.numpy())
        np.testing.assert_array_equal(
            model.predict_reward(s_first).mean.numpy(), model.predict_reward(s_second).mean.numpy()
        )
        np.testing.assert_array_equal(model.predict_mask(s_first).mean.numpy(), model.predict_mask(s_second).mean.numpy())
        assert not np.allclose(model.predict_obs(first).mean.numpy(), model.predict_obs(second).mean.numpy())

    def test_imagination_consumes_no_observations(self, tiny_config):
        """Test imagine_step never touches the encoder"""
        model = WorldModel(tiny_config)
        with patch.object(model, "encode", side_effect=AssertionError("encoder used")):
            state, prior = model.imagine_step(model.initial_state(3), tf.zeros([3, 2]))
        assert state.h.shape == (3, tiny_config.model.deter_size)
        assert prior.logits.shape == (3, tiny_config.model.stoch_groups, tiny_config.model.stoch_classes)


@pytest.mark.unit
class TestWorldModelLoss:
    """Test the joint loss"""

    def test_breakdown_sums_to_total(self, tiny_config):
        """Test total = image + mask + reward NLL + beta * KL penalty"""
        model = WorldModel(tiny_config)
        breakdown = model.loss(random_batch(tiny_config))
        expected = breakdown.image_nll + breakdown.mask_nll + breakdown.reward_nll + breakdown.beta * breakdown.kl_penalty
        assert breakdown.total == pytest.approx(expected, rel=1e-5)
        assert breakdown.kl >= -1e-5
        assert breakdown.kl_penalty == pytest.approx(breakdown.kl, rel=1e-5, abs=1e-5)

    def test_free_nats_lift_penalty(self, tiny_config):
        """Test free nats only raise the penalty, never the reported KL"""
        config = tiny_config.with_overrides({"model.free_nats": 1000.0})
        breakdown = WorldModel(config).loss(random_batch(config))
        length = config.replay.sequence_length
        assert breakdown.kl_penalty == pytest.approx(1000.0 * length, rel=1e-5)
        assert breakdown.kl < breakdown.kl_penalty

    def test_zero_beta_is_likelihood_only(self, tiny_config):
        """Test beta = 0 leaves exactly the image, mask and reward NLL sum while the KL is still reported"""
        config = tiny_config.with_overrides({"model.beta": 0.0})
        model = WorldModel(config)
        batch = random_batch(config)
        breakdown = model.loss(batch)
        assert breakdown.beta == 0.0
        assert breakdown.total == pytest.approx(breakdown.image_nll + breakdown.mask_nll + breakdown.reward_nll, rel=1e-6)
        assert breakdown.kl > 0.0

        prior_variables = model.components["rssm"].prior_net.trainable_variables
        with tf.GradientTape() as tape:
            losses, _ = model.compute_loss(*model._batch_tensors(batch))
        gradients = tape.gradient(losses["total"], prior_variables, unconnected_gradients=tf.UnconnectedGradients.ZERO)
        for grad in gradients:
            np.testing.assert_array_equal(grad.numpy(), 0.0)

    def test_no_filter_drops_mask_term(self, tiny_config):
        """Test the baseline has no mask loss"""
        config = tiny_config.with_overrides({"variant": "no_filter"})
        breakdown = WorldModel(config).loss(random_batch(config))
        assert breakdown.mask_nll == 0.0

    def test_observe_shapes(self, tiny_config):
        """Test sequence observation returns (B, L) states and distributions"""
        model = WorldModel(tiny_config)
        batch = random_batch(tiny_config, batch_size=3, length=5)
        states, posterior, prior = model.observe(batch.observations, batch.actions)
        cfg = tiny_config.model
        assert states.h.shape == (3, 5, cfg.deter_size)
        assert states.z.shape == (3, 5, cfg.stoch_groups, cfg.stoch_classes)
        assert posterior.logits.shape == prior.logits.shape == (3, 5, cfg.stoch_groups, cfg.stoch_classes)

    def test_non_finite_loss_aborts_update(self, tiny_config):
        """Test a NaN reward raises NumericalError and leaves parameters unchanged"""
        model = WorldModel(tiny_config)
        batch = random_batch(tiny_config)
        batch.rewards[0, 0] = np.nan
        before = model.checksum()
        with pytest.raises(NumericalError) as excinfo:
            model.train_step(batch)
        assert excinfo.value.component == "reward_nll"
        assert model.checksum() == before

    @pytest.mark.integration
    def test_training_reduces_loss(self, tiny_config):
        """Test repeated steps on one batch reduce the loss"""
        model = WorldModel(tiny_config)
        batch = random_batch(tiny_config)
        start = model.loss(batch).total
        for _ in range(30):
            model.train_step(batch)
        assert model.loss(batch).total < start

    def test_train_step_returns_stopped_posteriors(self, tiny_config):
        """Test train_step hands back (B, L) posterior states"""
        model = WorldModel(tiny_config)
        _, states = model.train_step(random_batch(tiny_config))
        assert states.h.shape[:2] == (tiny_config.replay.batch_size, tiny_config.replay.sequence_length)


@pytest.mark.slow
class TestWorldModelGradients:
    """Test analytic gradients against central finite differences in double precision"""

    def test_joint_loss_gradients(self, double_config):
        """Test gradients of the joint loss, the filter included"""
        model = WorldModel(double_config)
        batch = random_batch(double_config, seed=3)
        tensors = model._batch_tensors(batch)

        def loss_fn():
            return model.compute_loss(*tensors)[0]["total"]

        checked = finite_difference_check(loss_fn, model.trainable_variables)
        assert checked >= len(model.trainable_variables)

    def test_filter_gradients(self, double_config):
        """Test gradients of the mask term with respect to the filter parameters"""
        model = WorldModel(double_config)
        batch = random_batch(double_config, seed=4)
        tensors = model._batch_tensors(batch)

        def loss_fn():
            return model.compute_loss(*tensors)[0]["mask_nll"]

        finite_difference_check(loss_fn, model.components["filter"].trainable_variables, entries_per_variable=4)


@pytest.mark.unit
class TestWorldModelWeights:
    """Test snapshots, checksums and weight transfer"""

    def test_snapshot_is_a_copy(self, tiny_config):
        """Test snapshots do not follow later updates"""
        model = WorldModel(tiny_config)
        snapshot = model.snapshot()
        frozen = [w.copy() for w in snapshot["filter"]]
        before = model.checksum()
        model.train_step(random_batch(tiny_config))
        assert model.checksum() != before
        for a, b in zip(snapshot["filter"], frozen):
            np.testing.assert_array_equal(a, b)

    def test_set_weights_transfers_parameters(self, tiny_config):
        """Test weights copied into a fresh model reproduce its checksum"""
        source = WorldModel(tiny_config)
        source.train_step(random_batch(tiny_config))
        target = WorldModel(tiny_config, seed=123)
        target.set_weights(source.get_weights())
        assert target.checksum() == source.checksum()
