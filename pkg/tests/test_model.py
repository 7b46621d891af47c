import numpy as np
import pytest

from fairmargin.data import GroupedDataset, generate_synthetic
from fairmargin.errors import ConfigurationError, NumericDomainError, TrainingDivergedError
from fairmargin.losses import LossConfig, LossKind
from fairmargin.model import (
    ModelParams,
    OptimizerConfig,
    batch_loss_and_gradients,
    embed,
    init_model,
    load_checkpoint,
    nearest_identity,
    restore,
    save_checkpoint,
    snapshot,
    train_epochs,
)

from conftest import finite_difference, rel_error, small_spec


def norm_softmax_cfg(scale=20.0):
    return LossConfig(kind=LossKind.NORM_SOFTMAX, scale=scale)


def models_equal(a, b):
    if a.epochs_done != b.epochs_done:
        return False
    pairs = list(zip(a.enc_weights, b.enc_weights))
    pairs += list(zip(a.enc_biases, b.enc_biases))
    pairs += list(zip(a.vel_weights, b.vel_weights))
    pairs += list(zip(a.vel_biases, b.vel_biases))
    pairs.append((a.identity_weights, b.identity_weights))
    pairs.append((a.vel_identity, b.vel_identity))
    return all(np.array_equal(x, y) for x, y in pairs)


class TestInit:
    def test_deterministic(self):
        a = init_model(6, [8], 4, 10, seed=3)
        b = init_model(6, [8], 4, 10, seed=3)
        assert models_equal(a, b)

    def test_no_hidden_is_single_linear_map(self):
        m = init_model(6, [], 4, 10, seed=0)
        assert len(m.enc_weights) == 1
        assert m.enc_weights[0].shape == (6, 4)

    def test_identity_columns_unit_norm(self):
        m = init_model(6, [8], 4, 10, seed=0)
        np.testing.assert_allclose(np.linalg.norm(m.identity_weights, axis=0), 1.0,
                                   atol=1e-9)

    def test_bad_dims(self):
        with pytest.raises(ConfigurationError):
            init_model(0, [8], 4, 10, seed=0)


class TestEmbed:
    def test_unit_norm(self):
        m = init_model(6, [8], 4, 10, seed=1)
        rng = np.random.default_rng(0)
        feats = m.embed_batch(rng.standard_normal((20, 6)))
        np.testing.assert_allclose(np.linalg.norm(feats, axis=1), 1.0, atol=1e-9)

    def test_single_layer_is_normalized_projection(self):
        m = init_model(5, [], 3, 4, seed=2)
        x = np.arange(5.0)
        raw = x @ m.enc_weights[0] + m.enc_biases[0]
        np.testing.assert_allclose(m.embed_batch(x[None, :])[0],
                                   raw / np.linalg.norm(raw), atol=1e-12)

    def test_scale_invariance_of_final_normalization(self):
        m = init_model(5, [], 3, 4, seed=2)
        doubled = m.copy()
        doubled.enc_weights[0] *= 2.0
        x = np.random.default_rng(1).standard_normal((7, 5))
        np.testing.assert_allclose(m.embed_batch(x), doubled.embed_batch(x), atol=1e-12)

    def test_zero_norm_raises(self):
        m = init_model(5, [], 3, 4, seed=2)
        with pytest.raises(NumericDomainError):
            m.embed_batch(np.zeros((1, 5)))


class TestTraining:
    def test_zero_learning_rate_keeps_params(self, small_ds):
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=0)
        before = m.copy()
        opt = OptimizerConfig(learning_rate=0.0, batch_size=16, seed=0)
        _, losses = train_epochs(m, small_ds, norm_softmax_cfg(), opt, 3)
        # identity columns pass through a renormalization, so allow ulp noise
        np.testing.assert_allclose(before.identity_weights, m.identity_weights,
                                   rtol=0, atol=1e-14)
        assert all(np.array_equal(w0, w1)
                   for w0, w1 in zip(before.enc_weights, m.enc_weights))
        assert losses[0] == pytest.approx(losses[1]) == pytest.approx(losses[2])

    def test_identity_count_mismatch(self, small_ds):
        m = init_model(small_ds.d_in, [16], 4, 3, seed=0)
        with pytest.raises(ConfigurationError):
            train_epochs(m, small_ds, norm_softmax_cfg(), OptimizerConfig(), 1)

    def test_separable_two_identities_reach_full_accuracy(self):
        spec = small_spec(n_groups=1, identities_per_group=(2,),
                          samples_per_identity=12, group_concentration=(200.0,),
                          group_center_spread=(1.0,))
        ds = generate_synthetic(spec)
        m = init_model(ds.d_in, [16], 4, 2, seed=1)
        opt = OptimizerConfig(learning_rate=0.05, batch_size=8, seed=1)
        train_epochs(m, ds, norm_softmax_cfg(), opt, 50)
        # oracle: nearest-weight-column classification on the training set
        predicted = nearest_identity(m, ds.features)
        assert np.array_equal(predicted, ds.identity_ids)

    def test_loss_decreases_early_for_most_seeds(self):
        wins = 0
        for seed in range(10):
            ds = generate_synthetic(small_spec(seed=seed, samples_per_identity=8))
            m = init_model(ds.d_in, [32], 8, ds.n_identities, seed=seed)
            opt = OptimizerConfig(learning_rate=0.05, batch_size=16, seed=seed)
            _, losses = train_epochs(m, ds, norm_softmax_cfg(60.0), opt, 5)
            if all(b <= a + 1e-9 for a, b in zip(losses, losses[1:])):
                wins += 1
        assert wins >= 8

    def test_identity_columns_stay_unit_norm(self, small_ds):
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=0)
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=0)
        train_epochs(m, small_ds, norm_softmax_cfg(), opt, 3)
        assert np.max(np.abs(np.linalg.norm(m.identity_weights, axis=0) - 1.0)) <= 1e-9

    def test_determinism(self, small_ds):
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=4)
        runs = []
        for _ in range(2):
            m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=4)
            train_epochs(m, small_ds, norm_softmax_cfg(), opt, 4)
            runs.append(m)
        assert models_equal(*runs)

    def test_divergence_raises_with_epoch(self, small_ds):
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=0)
        cfg = LossConfig(kind=LossKind.SOFTMAX)
        opt = OptimizerConfig(learning_rate=1e12, batch_size=16, seed=0,
                              weight_decay=0.0)
        with pytest.raises(TrainingDivergedError) as err:
            train_epochs(m, small_ds, cfg, opt, 20)
        assert err.value.epoch >= 0


class TestSnapshot:
    def test_round_trip_and_continue(self, small_ds):
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=2)
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=2)
        train_epochs(m, small_ds, norm_softmax_cfg(), opt, 2)
        snap = snapshot(m)
        direct = m
        train_epochs(direct, small_ds, norm_softmax_cfg(), opt, 3)
        resumed = restore(snap)
        train_epochs(resumed, small_ds, norm_softmax_cfg(), opt, 3)
        assert models_equal(direct, resumed)

    def test_snapshot_insensitive_to_source_mutation(self, small_ds):
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=2)
        snap = snapshot(m)
        m.identity_weights[:] = 0.0
        assert np.any(restore(snap).identity_weights != 0.0)

    def test_branches_differ_only_by_margin(self, small_ds):
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=3)
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=3)
        train_epochs(m, small_ds, norm_softmax_cfg(), opt, 1)
        snap = snapshot(m)
        margins_a = (0.0, 0.2, 0.2, 0.2)
        margins_b = (0.0, 0.4, 0.4, 0.4)
        cfg_a = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=20.0,
                           group_margins=margins_a)
        cfg_b = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=20.0,
                           group_margins=margins_b)
        m_a1 = restore(snap)
        train_epochs(m_a1, small_ds, cfg_a, opt, 1)
        m_b = restore(snap)
        train_epochs(m_b, small_ds, cfg_b, opt, 1)
        m_a2 = restore(snap)
        train_epochs(m_a2, small_ds, cfg_a, opt, 1)
        assert models_equal(m_a1, m_a2)
        assert not models_equal(m_a1, m_b)


class TestGradientCheck:
    def test_end_to_end_parameter_gradients(self):
        # seed picked away from ReLU and margin-branch kinks, where central
        # differences are meaningless
        rng = np.random.default_rng(1)
        m = init_model(4, [6, 5], 3, 3, seed=1)
        x = rng.standard_normal((5, 4))
        y = rng.integers(0, 3, size=5)
        groups = rng.integers(0, 2, size=5)
        cfg = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=10.0, base_margin=0.2,
                         group_margins=(0.2, 0.45), anchor_group=0)

        def loss():
            return batch_loss_and_gradients(m, x, y, groups, cfg)[0]

        _, gw, gb, gi = batch_loss_and_gradients(m, x, y, groups, cfg)
        for layer in range(len(m.enc_weights)):
            assert rel_error(gw[layer],
                             finite_difference(loss, m.enc_weights[layer])) <= 1e-4
            assert rel_error(gb[layer],
                             finite_difference(loss, m.enc_biases[layer])) <= 1e-4
        assert rel_error(gi, finite_difference(loss, m.identity_weights)) <= 1e-4


class TestCheckpoint:
    def test_round_trip_exact(self, small_ds, tmp_path):
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=5)
        m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=5)
        train_epochs(m, small_ds, norm_softmax_cfg(), opt, 2)
        path = tmp_path / "model.ckpt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert models_equal(m, loaded)
        # training continues identically from a reloaded checkpoint
        train_epochs(m, small_ds, norm_softmax_cfg(), opt, 2)
        train_epochs(loaded, small_ds, norm_softmax_cfg(), opt, 2)
        assert models_equal(m, loaded)

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_text("not a checkpoint\n")
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)


def test_embed_sample_matches_batch(small_ds):
    m = init_model(small_ds.d_in, [16], 4, small_ds.n_identities, seed=0)
    sample = small_ds.samples[3]
    np.testing.assert_allclose(embed(m, sample),
                               m.embed_batch(small_ds.features[3:4])[0], atol=0)
