"""Bi-directional similarity tables and scoring."""

import numpy as np
import pytest

from taskmetric.classifier import classify, score
from taskmetric.data import EmbeddingDataset, EpisodeConfig, MetricMatrix
from taskmetric.errors import ParameterError
from taskmetric.metric import episode_prototypes
from taskmetric.sampler import sample_episode


def random_inputs(rng, n_query=8, n_proto=4, d=5):
    return rng.normal(size=(n_query, d)), rng.normal(size=(n_proto, d))


def nearest_prototype_oracle(queries, prototypes):
    """Independent Euclidean nearest-prototype classifier, lowest index wins ties."""
    preds = []
    for q in queries:
        d2 = ((prototypes - q) ** 2).sum(axis=1)
        preds.append(int(np.argmin(d2)))
    return np.asarray(preds)


class TestStochasticity:
    def test_rows_and_columns_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            q, p = random_inputs(rng, n_query=int(rng.integers(1, 12)),
                                 n_proto=int(rng.integers(2, 7)))
            table = classify(q, p, MetricMatrix.identity(5))
            np.testing.assert_allclose(table.positive.sum(axis=1), 1.0, atol=1e-9)
            np.testing.assert_allclose(table.negative.sum(axis=0), 1.0, atol=1e-9)

    def test_bisim_is_elementwise_product(self):
        rng = np.random.default_rng(1)
        q, p = random_inputs(rng)
        table = classify(q, p, MetricMatrix.identity(5))
        np.testing.assert_array_equal(table.bisim, table.positive * table.negative)

    def test_entries_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(2)
        q, p = random_inputs(rng)
        table = classify(q, p, MetricMatrix.identity(5))
        for t in (table.positive, table.negative):
            assert np.all(t > 0) and np.all(t < 1)


class TestSingleQuery:
    def test_negative_column_is_one_and_modes_agree(self):
        rng = np.random.default_rng(3)
        q, p = random_inputs(rng, n_query=1)
        pos = classify(q, p, MetricMatrix.identity(5), mode="positive_only")
        bi = classify(q, p, MetricMatrix.identity(5), mode="bisim")
        np.testing.assert_allclose(bi.negative, 1.0)
        assert pos.predictions.tolist() == bi.predictions.tolist()


class TestLimitCases:
    def test_query_on_prototype_with_far_alternatives(self):
        p = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
        q = np.array([[0.0, 0.0]])
        table = classify(q, p, MetricMatrix.identity(2), mode="positive_only")
        assert table.predictions[0] == 0
        assert table.positive[0, 0] > 0.999

    def test_tie_broken_toward_lowest_class(self):
        p = np.array([[1.0, 0.0], [-1.0, 0.0]])
        q = np.array([[0.0, 0.0]])
        table = classify(q, p, MetricMatrix.identity(2), mode="positive_only")
        assert table.predictions[0] == 0


class TestBaselineEquivalence:
    def test_positive_only_identity_equals_nearest_prototype(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(200, 6))
        labels = np.repeat(np.arange(10), 20)
        ds = EmbeddingDataset(feats, labels)
        cfg = EpisodeConfig(n_way=5, k_shot=3, n_query_per_class=4)
        for _ in range(50):
            ep = sample_episode(ds, cfg, rng)
            protos = episode_prototypes(ep)
            table = classify(ep.query_x, protos, MetricMatrix.identity(6),
                             mode="positive_only")
            oracle = nearest_prototype_oracle(ep.query_x, protos)
            np.testing.assert_array_equal(table.predictions, oracle)


class TestInvariances:
    def test_query_permutation_permutes_rows_and_keeps_predictions(self):
        rng = np.random.default_rng(5)
        q, p = random_inputs(rng, n_query=9)
        table = classify(q, p, MetricMatrix.identity(5))
        perm = rng.permutation(9)
        permuted = classify(q[perm], p, MetricMatrix.identity(5))
        np.testing.assert_allclose(permuted.positive, table.positive[perm], atol=1e-12)
        np.testing.assert_allclose(permuted.negative, table.negative[perm], atol=1e-12)
        np.testing.assert_array_equal(permuted.predictions, table.predictions[perm])

    def test_constant_distance_shift_keeps_argmax(self):
        # shifting one query's distances by a constant leaves its
        # positive-direction argmax unchanged (softmax shift invariance)
        rng = np.random.default_rng(6)
        q, p = random_inputs(rng, n_query=1, n_proto=5)
        base = classify(q, p, MetricMatrix.identity(5), mode="positive_only")
        scaled = classify(q * 3.0, p * 3.0, MetricMatrix.identity(5), mode="positive_only")
        assert np.argmax(base.positive[0]) == np.argmax(scaled.positive[0])

    def test_squared_switch_changes_table_not_identity_argmax(self):
        rng = np.random.default_rng(7)
        q, p = random_inputs(rng)
        plain = classify(q, p, MetricMatrix.identity(5), mode="positive_only")
        sq = classify(q, p, MetricMatrix.identity(5), mode="positive_only", squared=True)
        assert not np.allclose(plain.positive, sq.positive)
        np.testing.assert_array_equal(plain.predictions, sq.predictions)


class TestScore:
    def test_all_correct(self):
        rng = np.random.default_rng(8)
        q, p = random_inputs(rng)
        table = classify(q, p, MetricMatrix.identity(5))
        assert score(table, table.predictions) == 1.0

    def test_all_wrong(self):
        rng = np.random.default_rng(9)
        q, p = random_inputs(rng)
        table = classify(q, p, MetricMatrix.identity(5))
        wrong = (table.predictions + 1) % p.shape[0]
        assert score(table, wrong) == 0.0

    def test_random_predictions_near_chance(self):
        # balanced 5-class labels against arbitrary predictions
        rng = np.random.default_rng(10)
        hits = 0
        total = 10_000
        q = rng.normal(size=(total, 4))
        p = rng.normal(size=(5, 4))
        table = classify(q, p, MetricMatrix.identity(4))
        labels = rng.integers(0, 5, size=total)
        acc = score(table, labels)
        assert abs(acc - 0.2) < 0.02

    def test_length_mismatch(self):
        rng = np.random.default_rng(11)
        q, p = random_inputs(rng)
        table = classify(q, p, MetricMatrix.identity(5))
        with pytest.raises(ParameterError):
            score(table, np.zeros(3, dtype=int))


class TestValidation:
    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            classify(np.zeros((2, 3)), np.zeros((2, 4)), MetricMatrix.identity(3))

    def test_single_prototype_rejected(self):
        with pytest.raises(ParameterError):
            classify(np.zeros((2, 3)), np.zeros((1, 3)), MetricMatrix.identity(3))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ParameterError):
            classify(np.zeros((2, 3)), np.zeros((2, 3)), MetricMatrix.identity(3),
                     mode="sideways")
