import math

import numpy as np
import pytest

from fairmargin.adaptive import (
    AdaptiveTrainConfig,
    BaselineMode,
    evaluate,
    load_margin_history,
    manual_margins,
    save_margin_history,
    train_adaptive,
    train_baseline,
)
from fairmargin.data import (
    DatasetSpec,
    Sample,
    VerificationPair,
    generate_synthetic,
    make_verification_pairs,
    split_train_val,
)
from fairmargin.losses import LossConfig, LossKind
from fairmargin.mdp import MarginAction, StateSpace
from fairmargin.model import OptimizerConfig, init_model, train_epochs
from fairmargin.qlearning import PolicyTable


def setup_data(seed=0):
    spec = DatasetSpec(n_groups=3, identities_per_group=(8, 6, 6),
                       samples_per_identity=6, d_in=10,
                       group_concentration=(40.0, 12.0, 10.0),
                       group_center_spread=(1.0, 0.5, 0.45), seed=seed)
    full = generate_synthetic(spec)
    rest, val = split_train_val(full, 3, seed=seed + 1)
    train, test = split_train_val(rest, 2, seed=seed + 2)
    return train, val, test


def soft_space():
    return StateSpace(2, (0.0, 0.2, 0.4, 0.6), (0.05, 0.1, 0.15), 0.2)


def constant_policy(space, action):
    return PolicyTable(space, {s: action for s in space.states()})


def models_identical(a, b):
    return (all(np.array_equal(x, y) for x, y in zip(a.enc_weights, b.enc_weights))
            and np.array_equal(a.identity_weights, b.identity_weights))


class TestAdaptiveTraining:
    def test_stay_policy_equals_fixed_baseline(self):
        train, val, _ = setup_data()
        space = soft_space()
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=7)
        cfg = AdaptiveTrainConfig(loss_flavor="soft", total_epochs=6, scale=16.0)
        adaptive, history = train_adaptive(train, val, space,
                                           constant_policy(space, MarginAction.STAY),
                                           cfg, opt)
        baseline = train_baseline(
            train, AdaptiveTrainConfig(loss_flavor="soft", total_epochs=6, scale=16.0,
                                       baseline_mode=BaselineMode.FIXED_MARGIN), opt)
        assert models_identical(adaptive, baseline)
        assert all(h.margin == 0.0 for h in history)

    def test_margin_history_on_grid_with_bounded_steps(self):
        train, val, _ = setup_data()
        space = soft_space()
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=7)
        cfg = AdaptiveTrainConfig(loss_flavor="soft", total_epochs=10, scale=16.0)
        _, history = train_adaptive(train, val, space,
                                    constant_policy(space, MarginAction.UP), cfg, opt)
        per_group = {}
        for h in history:
            assert h.margin in space.margin_grid
            prev = per_group.get(h.group)
            if prev is not None:
                assert abs(h.margin - prev) <= space.step + 1e-12
            per_group[h.group] = h.margin
        # an always-up policy saturates at the top of the grid
        assert all(m == 0.6 for m in per_group.values())

    def test_anchor_group_never_queried(self):
        train, val, _ = setup_data()
        space = soft_space()
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=7)
        cfg = AdaptiveTrainConfig(loss_flavor="soft", total_epochs=4, scale=16.0,
                                  anchor_group=0)
        _, history = train_adaptive(train, val, space,
                                    constant_policy(space, MarginAction.UP), cfg, opt)
        assert all(h.group != 0 for h in history)
        queried = {h.group for h in history}
        assert queried == {1, 2}

    def test_decision_interval(self):
        train, val, _ = setup_data()
        space = soft_space()
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=7)
        cfg = AdaptiveTrainConfig(loss_flavor="soft", total_epochs=6,
                                  decision_interval=3, scale=16.0)
        _, history = train_adaptive(train, val, space,
                                    constant_policy(space, MarginAction.STAY), cfg, opt)
        assert sorted({h.epoch for h in history}) == [0, 3]

    def test_reproducible(self):
        outs = []
        for _ in range(2):
            train, val, _ = setup_data()
            space = soft_space()
            opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=7)
            cfg = AdaptiveTrainConfig(loss_flavor="soft", total_epochs=5, scale=16.0)
            outs.append(train_adaptive(train, val, space,
                                       constant_policy(space, MarginAction.UP),
                                       cfg, opt))
        assert models_identical(outs[0][0], outs[1][0])
        assert outs[0][1] == outs[1][1]

    def test_history_round_trip(self, tmp_path):
        train, val, _ = setup_data()
        space = soft_space()
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=7)
        cfg = AdaptiveTrainConfig(loss_flavor="soft", total_epochs=5, scale=16.0)
        _, history = train_adaptive(train, val, space,
                                    constant_policy(space, MarginAction.UP), cfg, opt)
        path = tmp_path / "history.txt"
        save_margin_history(history, path)
        assert load_margin_history(path) == history


class TestBaselines:
    def test_fixed_margin_arc_equals_plain_arcface(self):
        train, _, _ = setup_data()
        opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=3)
        cfg = AdaptiveTrainConfig(loss_flavor="arc", total_epochs=4, scale=16.0,
                                  baseline_mode=BaselineMode.FIXED_MARGIN)
        baseline = train_baseline(train, cfg, opt)
        plain = init_model(train.d_in, (32,), 8, train.n_identities, seed=opt.seed)
        arc = LossConfig(kind=LossKind.ARCFACE, scale=16.0, base_margin=0.3)
        train_epochs(plain, train, arc, opt, 4)
        assert models_identical(baseline, plain)

    def test_manual_margins_equal_sizes_give_base(self):
        spec = DatasetSpec(n_groups=3, identities_per_group=(5, 5, 5),
                           samples_per_identity=4, d_in=8,
                           group_concentration=(30.0,) * 3,
                           group_center_spread=(1.0,) * 3, seed=0)
        ds = generate_synthetic(spec)
        assert manual_margins(ds, "arc") == [0.3, 0.3, 0.3]
        assert manual_margins(ds, "soft") == [0.0, 0.0, 0.0]

    def test_manual_margins_monotone_in_count(self):
        spec = DatasetSpec(n_groups=4, identities_per_group=(12, 8, 5, 3),
                           samples_per_identity=4, d_in=8,
                           group_concentration=(30.0,) * 4,
                           group_center_spread=(1.0,) * 4, seed=0)
        ds = generate_synthetic(spec)
        margins = manual_margins(ds, "soft")
        counts = [len(ds.identities_in_group(g)) * 4 for g in range(4)]
        for (ca, ma), (cb, mb) in zip(zip(counts, margins), zip(counts[1:], margins[1:])):
            if ca >= cb:
                assert ma <= mb
        grid = (0.0, 0.2, 0.4, 0.6)
        assert all(m in grid for m in margins)

    def test_manual_margins_anchor_keeps_base(self):
        spec = DatasetSpec(n_groups=3, identities_per_group=(3, 12, 4),
                           samples_per_identity=4, d_in=8,
                           group_concentration=(30.0,) * 3,
                           group_center_spread=(1.0,) * 3, seed=0)
        ds = generate_synthetic(spec)
        assert manual_margins(ds, "arc", anchor_group=0)[0] == 0.3


class TestEvaluate:
    def test_perfect_model_degenerate_ser(self):
        spec = DatasetSpec(n_groups=2, identities_per_group=(4, 4),
                           samples_per_identity=5, d_in=8,
                           group_concentration=(4000.0, 4000.0),
                           group_center_spread=(1.0, 1.0), seed=3)
        ds = generate_synthetic(spec)
        model = init_model(ds.d_in, [], ds.d_in, ds.n_identities, seed=0)
        # identity encoder: raw features are the embeddings
        model.enc_weights[0] = np.eye(ds.d_in)
        pairs = make_verification_pairs(ds, 8, seed=0)
        report = evaluate(model, pairs)
        assert report.per_group_accuracy == (1.0, 1.0)
        assert report.std == pytest.approx(0.0)
        assert math.isinf(report.ser)

    def test_report_self_consistency(self):
        spec = DatasetSpec(n_groups=3, identities_per_group=(8, 8, 8),
                           samples_per_identity=8, d_in=10,
                           group_concentration=(3.0, 2.5, 2.0),
                           group_center_spread=(1.0, 1.0, 1.0), seed=4)
        full = generate_synthetic(spec)
        rest, val = split_train_val(full, 3, seed=5)
        train, test = split_train_val(rest, 3, seed=6)
        model = init_model(train.d_in, (16,), 6, train.n_identities, seed=1)
        pairs = make_verification_pairs(test, 40, seed=2)
        report = evaluate(model, pairs, geometry_ds=val)
        assert all(a < 1.0 for a in report.per_group_accuracy)
        from fairmargin.metrics import std_ser
        std, ser = std_ser(report.per_group_accuracy)
        assert report.std == std and report.ser == ser
        assert len(report.per_group_geometry) == 3
        assert report.avg_accuracy == pytest.approx(
            sum(report.per_group_accuracy) / 3)

    def test_hand_scored_toy_pairs(self):
        # two identities along e0 / e1 per group; model embeds features as-is
        def sample(vec, ident, group):
            return Sample(np.asarray(vec, dtype=np.float64), ident, group)

        e0 = [1.0, 0.0]
        near_e0 = [0.9839, 0.1788]  # cos with e0 ~ 0.984
        e1 = [0.0, 1.0]
        near_e1 = [0.1788, 0.9839]
        pairs = [
            # group 0: separable, hand-scored accuracy 4/4
            VerificationPair(sample(e0, 0, 0), sample(near_e0, 0, 0), True, 0),
            VerificationPair(sample(e1, 1, 0), sample(near_e1, 1, 0), True, 0),
            VerificationPair(sample(e0, 0, 0), sample(e1, 1, 0), False, 0),
            VerificationPair(sample(near_e0, 0, 0), sample(near_e1, 1, 0), False, 0),
            # group 1: one positive scored below a negative -> best is 3/4
            VerificationPair(sample(e0, 2, 1), sample(near_e0, 2, 1), True, 1),
            VerificationPair(sample(e0, 2, 1), sample(e1, 3, 1), True, 1),
            VerificationPair(sample(e0, 2, 1), sample(near_e1, 3, 1), False, 1),
            VerificationPair(sample(e1, 3, 1), sample(near_e1, 3, 1), False, 1),
        ]
        model = init_model(2, [], 2, 4, seed=0)
        model.enc_weights[0] = np.eye(2)
        report = evaluate(model, pairs)
        assert report.per_group_accuracy == (1.0, 0.75)
