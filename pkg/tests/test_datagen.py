import numpy as np
import pytest

from bvae.closedform import center_targets, sample_cov_S, sample_mean_b
from bvae.datagen import (GenConfig, build_probability_matrix, generate_dataset, load_dataset,
                          make_loadings, save_dataset)
from bvae.errors import ConfigurationError, DataError
from bvae.numerics import eig_sym_desc


class TestLoadings:
    def test_two_blocks(self):
        B = make_loadings(40, 2)
        np.testing.assert_array_equal(B[:20, 0], 1)
        np.testing.assert_array_equal(B[20:, 0], 0)
        np.testing.assert_array_equal(B[20:40, 1], 1)
        np.testing.assert_array_equal(B[:20, 1], 0)

    def test_trailing_rows_zero(self):
        B = make_loadings(200, 2)
        assert not B[40:].any()
        assert B.sum() == 40

    def test_single_block(self):
        np.testing.assert_array_equal(make_loadings(20, 1), np.ones((20, 1)))

    def test_too_small(self):
        with pytest.raises(ConfigurationError):
            make_loadings(39, 2)


class TestProbabilityMatrix:
    def test_zero_scores(self):
        np.testing.assert_array_equal(build_probability_matrix(np.zeros((3, 2)), make_loadings(40, 2)), 0.5)

    def test_unloaded_columns_are_half(self):
        rng = np.random.default_rng(0)
        Pi = build_probability_matrix(rng.standard_normal((10, 2)) * 3, make_loadings(60, 2))
        np.testing.assert_array_equal(Pi[:, 40:], 0.5)
        assert np.all((Pi > 0) & (Pi < 1))

    def test_log3(self):
        Pi = build_probability_matrix(np.array([[np.log(3.0)]]), np.array([[1.0]]))
        assert Pi[0, 0] == pytest.approx(0.75, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            build_probability_matrix(np.zeros((3, 2)), np.zeros((5, 3)))


class TestGenerate:
    def test_shape_and_determinism(self):
        cfg = GenConfig(N=100, d=200, k=2, seed=7)
        a, b = generate_dataset(cfg), generate_dataset(cfg)
        assert a.X.shape == (100, 200)
        assert set(np.unique(a.X)) <= {0, 1}
        assert a.X.tobytes() == b.X.tobytes()

    def test_seed_changes_data(self):
        a = generate_dataset(GenConfig(N=50, d=40, seed=1))
        b = generate_dataset(GenConfig(N=50, d=40, seed=2))
        assert a.X.tobytes() != b.X.tobytes()

    def test_probabilities_only_on_request(self):
        assert generate_dataset(GenConfig(N=5, d=40)).Pi is None
        ds = generate_dataset(GenConfig(N=5, d=40, keep_probabilities=True))
        assert ds.Pi.shape == (5, 40) and np.all((ds.Pi > 0) & (ds.Pi < 1))

    def test_unloaded_column_means(self):
        N = 10000
        X = generate_dataset(GenConfig(N=N, d=200, seed=3)).X
        band = 4 * np.sqrt(0.25 / N)
        assert np.all(np.abs(X[:, 40:].mean(axis=0) - 0.5) <= band)

    def test_first_block_has_strong_component(self):
        X = generate_dataset(GenConfig(N=10000, d=200, seed=4)).X
        Z = 4 * (X[:, :20] - 0.5)
        S = np.cov(Z, rowvar=False, bias=True)
        assert eig_sym_desc(S).eigenvalues[0] > 4

    @pytest.mark.parametrize("kw", [dict(N=0, d=40), dict(N=5, d=40, variances=(0.1,)),
                                    dict(N=5, d=40, variances=(0.1, -1.0)), dict(N=5, d=30)])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigurationError):
            GenConfig(**kw)


def test_independent_bernoulli_covariance_is_diagonal():
    """Without a latent factor, S is close to 16 diag(p(1-p)) and no eigenvalue exceeds 4 much."""
    N, d = 20000, 12
    rng = np.random.default_rng(8)
    p = rng.uniform(0.1, 0.9, size=d)
    X = (rng.random((N, d)) < p).astype(np.uint8)
    Y = center_targets(X)
    S = sample_cov_S(Y, sample_mean_b(Y))
    var = p * (1 - p)
    # Var of the sample variance of 4x and of a sample covariance, 4-sigma bands
    diag_sd = 16 * np.sqrt(var * (1 - 4 * var) / N)
    np.testing.assert_array_less(np.abs(np.diag(S) - 16 * var), 4 * diag_sd + 1e-12)
    off_sd = 16 * np.sqrt(np.outer(var, var) / N)
    off = ~np.eye(d, dtype=bool)
    assert np.all(np.abs(S[off]) <= 4 * off_sd[off])
    assert np.all(np.diag(S) <= 4 + 4 * diag_sd)
    assert eig_sym_desc(S).eigenvalues[0] < 4.2


class TestFiles:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(GenConfig(N=30, d=40, seed=5))
        csv_path, meta_path = save_dataset(ds, tmp_path / "data.csv")
        assert meta_path.name == "data.meta.json"
        back = load_dataset(csv_path)
        np.testing.assert_array_equal(back.X, ds.X)
        assert back.config == ds.config

    def test_plain_csv_without_metadata(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("0,1,1\n1,0,0\n")
        np.testing.assert_array_equal(load_dataset(p).X, [[0, 1, 1], [1, 0, 0]])

    def test_non_binary_reports_index(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("0,1,1\n1,2,0\n")
        with pytest.raises(DataError) as info:
            load_dataset(p)
        assert info.value.index == (1, 1)
