import math

import numpy as np
import pytest

from fairmargin.data import (
    GroupedDataset,
    generate_synthetic,
    load_dataset,
    make_verification_pairs,
    save_dataset,
    split_train_val,
)
from fairmargin.errors import ConfigurationError
from fairmargin.metrics import intra_stats_from_arrays

from conftest import small_spec


class TestGeneration:
    def test_counts(self):
        ds = generate_synthetic(small_spec())
        assert ds.n_identities == 10
        assert len(ds) == 50
        assert ds.n_groups == 4

    def test_same_seed_identical(self):
        a = generate_synthetic(small_spec(seed=7))
        b = generate_synthetic(small_spec(seed=7))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.identity_ids, b.identity_ids)
        assert np.array_equal(a.group_ids, b.group_ids)

    def test_different_seed_differs(self):
        a = generate_synthetic(small_spec(seed=7))
        b = generate_synthetic(small_spec(seed=8))
        assert not np.array_equal(a.features, b.features)

    def test_low_concentration_widens_intra_angle(self):
        # oracle: intra-class angle computed directly on the raw features
        spec = small_spec(group_concentration=(50.0, 50.0, 10.0, 50.0),
                          samples_per_identity=20)
        ds = generate_synthetic(spec)
        theta_hard, _ = intra_stats_from_arrays(ds.features, ds.identity_ids,
                                                ds.group_ids, 2)
        theta_easy, _ = intra_stats_from_arrays(ds.features, ds.identity_ids,
                                                ds.group_ids, 0)
        assert theta_hard > theta_easy

    def test_difficulty_monotone_over_seeds(self):
        # lower concentration must not shrink the expected intra-class angle
        lo, hi = [], []
        for seed in range(10):
            ds_lo = generate_synthetic(small_spec(
                seed=seed, group_concentration=(10.0, 50.0, 50.0, 50.0)))
            ds_hi = generate_synthetic(small_spec(
                seed=seed, group_concentration=(50.0, 50.0, 50.0, 50.0)))
            lo.append(intra_stats_from_arrays(
                ds_lo.features, ds_lo.identity_ids, ds_lo.group_ids, 0)[0])
            hi.append(intra_stats_from_arrays(
                ds_hi.features, ds_hi.identity_ids, ds_hi.group_ids, 0)[0])
        assert np.mean(lo) > np.mean(hi)

    def test_group_partition(self):
        ds = generate_synthetic(small_spec())
        assert [len(ds.identities_in_group(g)) for g in range(4)] == [4, 2, 2, 2]
        for i in range(len(ds)):
            assert ds.group_of_identity[ds.identity_ids[i]] == ds.group_ids[i]

    def test_features_unit_norm(self):
        ds = generate_synthetic(small_spec())
        np.testing.assert_allclose(np.linalg.norm(ds.features, axis=1), 1.0,
                                   atol=1e-12)

    def test_invalid_spec(self):
        with pytest.raises(ConfigurationError):
            small_spec(identities_per_group=(4, 2, 2))
        with pytest.raises(ConfigurationError):
            small_spec(samples_per_identity=1)
        with pytest.raises(ConfigurationError):
            small_spec(group_concentration=(50.0, 50.0, -1.0, 50.0))


class TestInvariants:
    def test_identity_in_two_groups_rejected(self):
        feats = np.eye(4)
        with pytest.raises(ConfigurationError):
            GroupedDataset(feats, [0, 0, 1, 1], [0, 1, 0, 0], 2)

    def test_single_sample_identity_rejected(self):
        feats = np.eye(3)
        with pytest.raises(ConfigurationError):
            GroupedDataset(feats, [0, 0, 1], [0, 0, 0], 1)

    def test_gap_in_identity_ids_rejected(self):
        feats = np.eye(4)
        with pytest.raises(ConfigurationError):
            GroupedDataset(feats, [0, 0, 2, 2], [0, 0, 0, 0], 1)

    def test_immutable(self):
        ds = generate_synthetic(small_spec())
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0


class TestSplit:
    def test_counts_and_disjoint(self, small_ds):
        spec = small_spec(identities_per_group=(10, 10, 10, 10))
        ds = generate_synthetic(spec)
        train, val = split_train_val(ds, 3, seed=1)
        for g in range(4):
            assert len(train.identities_in_group(g)) == 7
            assert len(val.identities_in_group(g)) == 3
        # identity id spaces are remapped, so compare feature rows
        train_rows = {tuple(row) for row in train.features}
        val_rows = {tuple(row) for row in val.features}
        assert not train_rows & val_rows

    def test_zero_val(self, small_ds):
        train, val = split_train_val(small_ds, 0, seed=1)
        assert train is small_ds
        assert len(val) == 0

    def test_deterministic(self, small_ds):
        a = split_train_val(small_ds, 1, seed=5)
        b = split_train_val(small_ds, 1, seed=5)
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[1].features, b[1].features)

    def test_too_small_group(self, small_ds):
        with pytest.raises(ConfigurationError):
            split_train_val(small_ds, 2, seed=1)  # groups 1..3 have 2 identities

    def test_contiguous_ids_after_split(self, small_ds):
        train, val = split_train_val(small_ds, 1, seed=0)
        for part in (train, val):
            assert set(part.identity_ids.tolist()) == set(range(part.n_identities))


class TestPairs:
    def test_balanced_counts(self, small_ds):
        pairs = make_verification_pairs(small_ds, 8, seed=3)
        assert len(pairs) == 32
        for g in range(4):
            group_pairs = [p for p in pairs if p.group_id == g]
            assert len(group_pairs) == 8
            assert sum(p.same_identity for p in group_pairs) == 4

    def test_within_group(self, small_ds):
        for p in make_verification_pairs(small_ds, 10, seed=3):
            assert p.sample_a.group_id == p.group_id
            assert p.sample_b.group_id == p.group_id
            assert (p.sample_a.identity_id == p.sample_b.identity_id) == p.same_identity

    def test_no_duplicate_pairs(self, small_ds):
        pairs = make_verification_pairs(small_ds, 20, seed=3)
        seen = set()
        for p in pairs:
            key = frozenset([(p.sample_a.identity_id, tuple(p.sample_a.features)),
                             (p.sample_b.identity_id, tuple(p.sample_b.features))])
            assert key not in seen
            seen.add(key)

    def test_single_identity_group_rejected(self):
        ds = generate_synthetic(small_spec(identities_per_group=(2, 1, 2, 2)))
        with pytest.raises(ConfigurationError):
            make_verification_pairs(ds, 4, seed=0)

    def test_overdraw_rejected(self, small_ds):
        # group 1 has 2 identities x 5 samples -> 2 * C(5,2) = 20 positive pairs
        with pytest.raises(ConfigurationError):
            make_verification_pairs(small_ds, 42, seed=0)

    def test_odd_count_rejected(self, small_ds):
        with pytest.raises(ConfigurationError):
            make_verification_pairs(small_ds, 5, seed=0)

    def test_deterministic(self, small_ds):
        a = make_verification_pairs(small_ds, 8, seed=9)
        b = make_verification_pairs(small_ds, 8, seed=9)
        assert [(p.same_identity, p.group_id) for p in a] == \
            [(p.same_identity, p.group_id) for p in b]
        assert all(np.array_equal(x.sample_a.features, y.sample_a.features)
                   for x, y in zip(a, b))


class TestSerialization:
    def test_round_trip_exact(self, small_ds, tmp_path):
        path = tmp_path / "ds.txt"
        save_dataset(small_ds, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.features, small_ds.features)
        assert np.array_equal(loaded.identity_ids, small_ds.identity_ids)
        assert np.array_equal(loaded.group_ids, small_ds.group_ids)
        assert loaded.n_groups == small_ds.n_groups

    def test_header(self, small_ds, tmp_path):
        path = tmp_path / "ds.txt"
        save_dataset(small_ds, path)
        header = path.read_text().splitlines()[0]
        assert "n_groups=4" in header and "d_in=8" in header

    def test_byte_identical_saves(self, small_ds, tmp_path):
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_dataset(small_ds, p1)
        save_dataset(small_ds, p2)
        assert p1.read_bytes() == p2.read_bytes()
