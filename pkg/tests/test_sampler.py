"""Episode sampling and the semi-supervised split protocol."""

import numpy as np
import pytest

from taskmetric.data import EmbeddingDataset, EpisodeConfig
from taskmetric.errors import SamplingError
from taskmetric.sampler import (
    SemiSplitConfig,
    sample_episode,
    sample_semi_episode,
    split_labeled_unlabeled,
)


def balanced_dataset(n_classes, per_class, d=4, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n_classes * per_class, d))
    labels = np.repeat(np.arange(n_classes), per_class)
    return EmbeddingDataset(feats, labels)


class TestSampleEpisode:
    def test_forced_partition_uses_every_sample(self):
        # exactly N classes of exactly K+Q rows: the draw is a partition
        ds = balanced_dataset(3, 4)
        cfg = EpisodeConfig(n_way=3, k_shot=1, n_query_per_class=3, seed=1)
        ep = sample_episode(ds, cfg)
        used = np.concatenate([ep.support_x, ep.query_x])
        assert used.shape[0] == ds.n_rows
        # every dataset row appears exactly once
        ds_sorted = np.sort(ds.features.view("f8,f8,f8,f8"), axis=0)
        ep_sorted = np.sort(used.view("f8,f8,f8,f8"), axis=0)
        np.testing.assert_array_equal(ds_sorted, ep_sorted)

    def test_same_seed_identical_episodes(self):
        ds = balanced_dataset(8, 10)
        cfg = EpisodeConfig(n_way=4, k_shot=2, n_query_per_class=3, seed=99)
        a = sample_episode(ds, cfg)
        b = sample_episode(ds, cfg)
        np.testing.assert_array_equal(a.support_x, b.support_x)
        np.testing.assert_array_equal(a.query_x, b.query_x)
        np.testing.assert_array_equal(a.support_y, b.support_y)

    def test_uniform_class_selection_frequency(self):
        # 20 classes, N=5: each class should appear with frequency 5/20
        ds = balanced_dataset(20, 6, d=2)
        cfg = EpisodeConfig(n_way=5, k_shot=1, n_query_per_class=1)
        rng = np.random.default_rng(12345)
        hits = np.zeros(20)
        draws = 10_000
        for _ in range(draws):
            ep = sample_episode(ds, cfg, rng)
            # recover global classes from the support features
            for row in ep.support_x:
                idx = np.flatnonzero((ds.features == row).all(axis=1))[0]
                hits[ds.labels[idx]] += 1
        freq = hits / draws
        assert np.all(np.abs(freq - 0.25) < 0.02)

    def test_support_query_disjoint_and_balanced(self):
        ds = balanced_dataset(6, 12)
        cfg = EpisodeConfig(n_way=5, k_shot=3, n_query_per_class=4)
        rng = np.random.default_rng(8)
        for _ in range(20):
            ep = sample_episode(ds, cfg, rng)
            assert ep.support_x.shape == (15, 4)
            assert np.bincount(ep.support_y).tolist() == [3] * 5
            assert np.bincount(ep.query_y).tolist() == [4] * 5
            srows = {tuple(r) for r in ep.support_x}
            qrows = {tuple(r) for r in ep.query_x}
            assert not srows & qrows

    def test_insufficient_classes_reported(self):
        ds = balanced_dataset(3, 10)
        cfg = EpisodeConfig(n_way=5, k_shot=1, n_query_per_class=1)
        with pytest.raises(SamplingError, match="need 5 classes"):
            sample_episode(ds, cfg)

    def test_insufficient_examples_reported(self):
        ds = balanced_dataset(5, 3)
        cfg = EpisodeConfig(n_way=5, k_shot=2, n_query_per_class=2)
        with pytest.raises(SamplingError, match="episode needs 4"):
            sample_episode(ds, cfg)


class TestSemiSplit:
    def test_forty_percent_split_exact(self):
        # classes of size 100 with fraction 0.4: exactly 40 labeled per class
        ds = balanced_dataset(5, 100)
        labeled, unlabeled = split_labeled_unlabeled(ds, SemiSplitConfig(0.4, split_seed=3))
        for c in range(5):
            assert labeled[c].size == 40
            assert unlabeled[c].size == 60

    def test_partitions_disjoint_over_10_random_splits(self):
        ds = balanced_dataset(4, 30)
        for s in range(10):
            labeled, unlabeled = split_labeled_unlabeled(ds, SemiSplitConfig(0.4, split_seed=s))
            for c in range(4):
                assert not set(labeled[c]) & set(unlabeled[c])
                assert set(labeled[c]) | set(unlabeled[c]) == set(ds.rows_of_class(c))

    def test_split_deterministic(self):
        ds = balanced_dataset(4, 25)
        a = split_labeled_unlabeled(ds, SemiSplitConfig(0.5, split_seed=42))
        b = split_labeled_unlabeled(ds, SemiSplitConfig(0.5, split_seed=42))
        for c in range(4):
            np.testing.assert_array_equal(a[0][c], b[0][c])
            np.testing.assert_array_equal(a[1][c], b[1][c])


class TestSampleSemiEpisode:
    def test_full_fraction_matches_plain_sampler(self):
        ds = balanced_dataset(6, 10)
        cfg = EpisodeConfig(n_way=3, k_shot=2, n_query_per_class=2, seed=17)
        plain = sample_episode(ds, cfg)
        semi = sample_semi_episode(ds, cfg, SemiSplitConfig(1.0, split_seed=5), 0)
        np.testing.assert_array_equal(plain.support_x, semi.support_x)
        np.testing.assert_array_equal(plain.query_x, semi.query_x)
        assert semi.unlabeled_x.shape[0] == 0

    def test_support_query_from_labeled_partition_only(self):
        ds = balanced_dataset(5, 50)
        split = SemiSplitConfig(0.4, split_seed=9)
        labeled, _ = split_labeled_unlabeled(ds, split)
        labeled_rows = {tuple(ds.features[i]) for rows in labeled.values() for i in rows}
        cfg = EpisodeConfig(n_way=3, k_shot=2, n_query_per_class=5)
        rng = np.random.default_rng(1)
        for _ in range(10):
            ep = sample_semi_episode(ds, cfg, split, 10, rng)
            for row in np.concatenate([ep.support_x, ep.query_x]):
                assert tuple(row) in labeled_rows
            # unlabeled points come from the unlabeled partition
            for row in ep.unlabeled_x:
                assert tuple(row) not in labeled_rows

    def test_unlabeled_pool_size(self):
        ds = balanced_dataset(5, 50)
        cfg = EpisodeConfig(n_way=3, k_shot=1, n_query_per_class=2)
        ep = sample_semi_episode(ds, cfg, SemiSplitConfig(0.4, split_seed=2), 25,
                                 np.random.default_rng(0))
        assert ep.unlabeled_x.shape == (25, 4)

    def test_oversized_unlabeled_request_fails(self):
        ds = balanced_dataset(3, 10)
        cfg = EpisodeConfig(n_way=3, k_shot=1, n_query_per_class=2)
        # fraction 0.9 leaves one unlabeled row per class
        with pytest.raises(SamplingError, match="unlabeled"):
            sample_semi_episode(ds, cfg, SemiSplitConfig(0.9, split_seed=1), 50,
                                np.random.default_rng(0))

    def test_labeled_partition_too_small_fails(self):
        ds = balanced_dataset(3, 10)
        cfg = EpisodeConfig(n_way=3, k_shot=3, n_query_per_class=3)
        with pytest.raises(SamplingError, match="labeled partition"):
            sample_semi_episode(ds, cfg, SemiSplitConfig(0.4, split_seed=1), 0,
                                np.random.default_rng(0))
