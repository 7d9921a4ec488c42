"""Domain types and embedding file formats."""

import numpy as np
import pytest

from taskmetric.data import (
    UNLABELED,
    EmbeddingDataset,
    Episode,
    EpisodeConfig,
    MetricHyperParams,
    MetricMatrix,
    PrototypeBank,
    load_embeddings,
    save_embeddings,
)
from taskmetric.errors import (
    DataFormatError,
    NotPositiveDefiniteError,
    ParameterError,
)


def random_dataset(rng, n=None, d=None, with_unlabeled=False):
    n = n or int(rng.integers(2, 40))
    d = d or int(rng.integers(1, 12))
    feats = rng.normal(size=(n, d)).astype(np.float32).astype(np.float64)
    labels = rng.integers(0, 5, size=n)
    if with_unlabeled:
        labels[rng.random(n) < 0.3] = UNLABELED
    return EmbeddingDataset(feats, labels)


class TestCsvFormat:
    def test_direct_parse(self, tmp_path):
        p = tmp_path / "two.csv"
        p.write_text("0,1.0,2.0\n1,3.0,4.0\n")
        ds = load_embeddings(p, "csv")
        assert ds.n_rows == 2 and ds.dim == 2
        assert set(ds.labels.tolist()) == {0, 1}
        np.testing.assert_array_equal(ds.features, [[1.0, 2.0], [3.0, 4.0]])

    def test_unlabeled_marker(self, tmp_path):
        p = tmp_path / "u.csv"
        p.write_text("?,0.5\n3,1.5\n")
        ds = load_embeddings(p, "csv")
        assert ds.labels.tolist() == [UNLABELED, 3]

    def test_empty_file_is_no_records(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(DataFormatError, match="no records"):
            load_embeddings(p, "csv")

    def test_dimension_mismatch_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,1.0,2.0\n1,3.0\n")
        with pytest.raises(DataFormatError, match="row 2"):
            load_embeddings(p, "csv")

    def test_non_finite_rejected(self, tmp_path):
        p = tmp_path / "nan.csv"
        p.write_text("0,nan,2.0\n")
        with pytest.raises(DataFormatError, match="row 1"):
            load_embeddings(p, "csv")

    def test_round_trip_within_csv_precision(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = EmbeddingDataset(rng.uniform(-10, 10, size=(25, 6)), rng.integers(0, 4, 25))
        p = tmp_path / "rt.csv"
        save_embeddings(ds, p, "csv")
        back = load_embeddings(p, "csv")
        assert back.labels.tolist() == ds.labels.tolist()
        np.testing.assert_allclose(back.features, ds.features, atol=1e-6)


class TestBinaryFormat:
    def test_round_trip_bit_exact_100_random_datasets(self, tmp_path):
        rng = np.random.default_rng(11)
        for i in range(100):
            ds = random_dataset(rng, with_unlabeled=(i % 3 == 0))
            p = tmp_path / f"ds{i}.bin"
            save_embeddings(ds, p, "bin")
            back = load_embeddings(p, "bin")
            assert back.labels.tolist() == ds.labels.tolist()
            # inputs are f32-representable, so the round trip is exact
            np.testing.assert_array_equal(back.features, ds.features)
            save_embeddings(back, tmp_path / "again.bin", "bin")
            assert (tmp_path / "again.bin").read_bytes() == p.read_bytes()

    def test_file_size_formula(self, tmp_path):
        # 16-byte header plus n * (4 + 4d) record bytes
        rng = np.random.default_rng(5)
        n, d = 1000, 32
        ds = EmbeddingDataset(rng.normal(size=(n, d)), rng.integers(0, 9, n))
        p = tmp_path / "sized.bin"
        save_embeddings(ds, p, "bin")
        assert p.stat().st_size == 16 + n * (4 + d * 4)

    def test_unknown_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(DataFormatError, match="magic"):
            load_embeddings(p, "bin")

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(6)
        ds = random_dataset(rng, n=4, d=3)
        p = tmp_path / "trunc.bin"
        save_embeddings(ds, p, "bin")
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(DataFormatError, match="expected"):
            load_embeddings(p, "bin")

    def test_zero_records_rejected(self, tmp_path):
        import struct

        p = tmp_path / "zero.bin"
        p.write_bytes(b"TEAMEMB1" + struct.pack("<II", 0, 4))
        with pytest.raises(DataFormatError, match="no records"):
            load_embeddings(p, "bin")


class TestDatasetValidation:
    def test_mixed_dims_rejected_before_write(self, tmp_path):
        with pytest.raises(ParameterError):
            EmbeddingDataset(np.array([[1.0, 2.0]]), np.array([0, 1]))
        assert list(tmp_path.iterdir()) == []

    def test_non_finite_rejected(self):
        with pytest.raises(ParameterError, match="row 1"):
            EmbeddingDataset(np.array([[1.0], [np.inf]]), np.array([0, 1]))

    def test_arrays_are_read_only(self):
        ds = EmbeddingDataset(np.ones((2, 2)), np.array([0, 1]))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0


class TestMetricMatrix:
    def test_rejects_asymmetry(self):
        with pytest.raises(NotPositiveDefiniteError, match="symmetric"):
            MetricMatrix(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefiniteError, match="positive definite"):
            MetricMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_accepts_spd_and_reports_dim(self):
        m = MetricMatrix(np.diag([2.0, 3.0, 4.0]))
        assert m.dim == 3
        assert m.shift_applied == 0.0

    def test_tiny_asymmetry_within_tolerance_ok(self):
        mat = np.eye(2)
        mat[0, 1] = 1e-12
        assert MetricMatrix(mat).dim == 2


class TestEpisodeValidation:
    def test_unbalanced_support_rejected(self):
        with pytest.raises(ParameterError, match="equal counts"):
            Episode(
                np.ones((3, 2)), np.array([0, 0, 1]),
                np.ones((1, 2)), np.array([0]),
            )

    def test_query_label_out_of_range_rejected(self):
        with pytest.raises(ParameterError, match="0..N-1"):
            Episode(
                np.ones((2, 2)), np.array([0, 1]),
                np.ones((1, 2)), np.array([5]),
            )


class TestConfigs:
    def test_episode_config_bounds(self):
        with pytest.raises(ParameterError):
            EpisodeConfig(n_way=1, k_shot=1, n_query_per_class=1)
        with pytest.raises(ParameterError):
            EpisodeConfig(n_way=2, k_shot=0, n_query_per_class=1)

    def test_hyperparams_defaults(self):
        hp = MetricHyperParams()
        assert (hp.alpha, hp.gamma, hp.lam) == (2.0, 0.2, 0.01)
        assert hp.prior is None and hp.knn_k == 3

    def test_explicit_prior_must_be_spd(self):
        with pytest.raises(ParameterError, match="positive definite"):
            MetricHyperParams(prior=np.array([[0.0, 0.0], [0.0, 1.0]]))

    def test_negative_hyperparams_rejected(self):
        for kw in ({"alpha": -1.0}, {"gamma": -0.1}, {"lam": -0.5}):
            with pytest.raises(ParameterError):
                MetricHyperParams(**kw)


class TestPrototypeBank:
    def test_vectors_sorted_by_class(self):
        bank = PrototypeBank({5: [1.0, 0.0], 2: [0.0, 1.0]})
        np.testing.assert_array_equal(bank.vectors(), [[0.0, 1.0], [1.0, 0.0]])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            PrototypeBank({0: [1.0], 1: [1.0, 2.0]})

    def test_from_dataset_means(self):
        ds = EmbeddingDataset(
            np.array([[0.0, 0.0], [2.0, 2.0], [4.0, 6.0]]), np.array([0, 0, 1])
        )
        bank = PrototypeBank.from_dataset(ds)
        np.testing.assert_array_equal(bank.entries[0], [1.0, 1.0])
        np.testing.assert_array_equal(bank.entries[1], [4.0, 6.0])

    def test_empty_bank_allowed(self):
        assert len(PrototypeBank.empty()) == 0
