import numpy as np
import pytest
from scipy.special import expit

from bvae.closedform import center_targets, fit_closed_form
from bvae.datagen import GenConfig, generate_dataset
from bvae.elbo import (bernoulli_log_likelihood, bernoulli_log_likelihood_logits, evaluate_closed_form_elbo,
                       g_third_derivative, kl_diag_gaussian, kl_full_gaussian, negative_elbo_batch, softplus,
                       taylor_g)
from bvae.errors import PreconditionError


def random_factor_data(seed, N=300, d=20):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 3))
    A = rng.standard_normal((N, k)) * rng.uniform(1, 3)
    B = (rng.random((d, k)) < 0.5) * rng.uniform(0.5, 2, (d, k))
    X = (rng.random((N, d)) < expit(A @ B.T)).astype(np.uint8)
    return center_targets(X)


class TestLikelihood:
    def test_fair_coin(self):
        assert bernoulli_log_likelihood([1, 0], [0.5, 0.5]) == pytest.approx(-2 * np.log(2), abs=1e-15)

    def test_clamped_extremes(self):
        x = np.array([1, 0, 1])
        val = bernoulli_log_likelihood(x, x.astype(float))
        assert 3 * np.log1p(-1e-12) - 1e-15 <= val <= 0

    def test_wrong_certain_prediction_is_finite(self):
        assert np.isfinite(bernoulli_log_likelihood([1, 0], [0.0, 1.0]))

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, 50)
        p = rng.uniform(0.01, 0.99, 50)
        oracle = 0.0
        for xi, pi in zip(x, p):
            oracle += np.log(pi) if xi else np.log(1 - pi)
        assert bernoulli_log_likelihood(x, p) == pytest.approx(oracle, abs=1e-12)

    def test_logits_agree(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, (4, 30))
        a = rng.standard_normal((4, 30)) * 3
        np.testing.assert_allclose(bernoulli_log_likelihood_logits(x, a), bernoulli_log_likelihood(x, expit(a)),
                                   rtol=1e-12)

    def test_nan(self):
        with pytest.raises(PreconditionError):
            bernoulli_log_likelihood([1, 0], [np.nan, 0.5])

    def test_softplus_large(self):
        np.testing.assert_allclose(softplus(np.array([-800.0, 0.0, 800.0])), [0.0, np.log(2), 800.0])


class TestKL:
    def test_standard_normal(self):
        assert kl_diag_gaussian(np.zeros(3), np.zeros(3)) == 0.0

    def test_mean_only(self):
        assert kl_diag_gaussian([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)

    def test_variance_e(self):
        assert kl_diag_gaussian([0.0, 0.0], [1.0, 0.0]) == pytest.approx((np.e - 2) / 2, abs=1e-12)
        assert (np.e - 2) / 2 == pytest.approx(0.359141, abs=1e-6)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(2)
        mu = rng.standard_normal((10**4, 3)) * 2
        lv = rng.standard_normal((10**4, 3)) * 2
        kl = kl_diag_gaussian(mu, lv)
        assert np.all(kl > 0)

    def test_full_matches_diag(self):
        rng = np.random.default_rng(3)
        mu = rng.standard_normal((5, 3))
        var = rng.uniform(0.2, 3, 3)
        np.testing.assert_allclose(kl_full_gaussian(mu, np.diag(var)), kl_diag_gaussian(mu, np.log(var)),
                                   rtol=1e-12)


class TestNegativeElbo:
    def test_uninformative(self):
        d = 7
        x = np.array([[1, 0, 1, 1, 0, 0, 1]])
        val = negative_elbo_batch(x, np.zeros((1, 2)), np.zeros((1, 2)), np.full((1, d), 0.5))
        assert val == pytest.approx(d * np.log(2), abs=1e-12)

    def test_loop_oracle_and_kl_floor(self):
        rng = np.random.default_rng(4)
        B, d, k = 6, 9, 2
        x = rng.integers(0, 2, (B, d))
        mu = rng.standard_normal((B, k))
        lv = rng.standard_normal((B, k))
        p = rng.uniform(0.05, 0.95, (B, d))
        terms = []
        for i in range(B):
            kl = 0.5 * sum(np.exp(lv[i, j]) - lv[i, j] + mu[i, j] ** 2 - 1 for j in range(k))
            ll = sum(x[i, j] * np.log(p[i, j]) + (1 - x[i, j]) * np.log(1 - p[i, j]) for j in range(d))
            terms.append(kl - ll)
        val = negative_elbo_batch(x, mu, lv, p)
        assert val == pytest.approx(np.mean(terms), abs=1e-12)
        assert val >= -np.mean(bernoulli_log_likelihood(x, p))

    def test_multiple_draws_average(self):
        rng = np.random.default_rng(5)
        x = rng.integers(0, 2, (3, 4))
        mu, lv = np.zeros((3, 1)), np.zeros((3, 1))
        p = rng.uniform(0.1, 0.9, (2, 3, 4))
        avg = 0.5 * (negative_elbo_batch(x, mu, lv, p[0]) + negative_elbo_batch(x, mu, lv, p[1]))
        assert negative_elbo_batch(x, mu, lv, p) == pytest.approx(avg, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(PreconditionError):
            negative_elbo_batch(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((2, 1)), np.full((2, 4), 0.5))


class TestTaylor:
    def test_expansion_point(self):
        exact, deg2, rem = taylor_g(0.0)
        assert exact == pytest.approx(-np.log(2), abs=1e-15)
        assert rem == 0.0

    @pytest.mark.parametrize("z", [-3.0, 3.0])
    def test_strictly_below(self, z):
        assert taylor_g(z)[2] > 0

    def test_stable_far_out(self):
        exact, _, rem = taylor_g(np.array([-700.0, 700.0]))
        assert np.all(np.isfinite(exact)) and np.all(rem > 0)
        assert exact[1] == pytest.approx(-700.0)

    def test_remainder_dense(self):
        z = np.random.default_rng(6).uniform(-30, 30, 10**5)
        assert taylor_g(z)[2].min() >= -1e-12
        assert taylor_g(np.linspace(-30, 30, 10**5 + 1))[2].min() >= -1e-12

    def test_remainder_heavy_tails(self):
        z = np.random.default_rng(7).standard_cauchy(10**4) * 10
        assert taylor_g(z)[2].min() >= -1e-12

    def test_third_derivative_matches_exponential_form(self):
        z = np.linspace(-5, 5, 101)
        ez = np.exp(z)
        np.testing.assert_allclose(g_third_derivative(z), ez * (ez - 1) / (1 + ez) ** 3, atol=1e-14)

    def test_third_derivative_extrema(self):
        grid = np.linspace(-6, 6, 1_200_001)
        g3 = g_third_derivative(grid)
        zmax, zmin = grid[np.argmax(g3)], grid[np.argmin(g3)]
        assert zmax == pytest.approx(np.log(2 + np.sqrt(3)), abs=1e-5)
        assert zmin == pytest.approx(np.log(2 - np.sqrt(3)), abs=1e-5)
        assert g3.max() == pytest.approx(1 / (6 * np.sqrt(3)), abs=1e-6)
        assert g3.min() == pytest.approx(-1 / (6 * np.sqrt(3)), abs=1e-6)


class TestClosedFormElbo:
    def test_zero_parameters_exact(self):
        Y = random_factor_data(0, N=50, d=12)
        sol = fit_closed_form(Y, 2)
        from dataclasses import replace
        zero = replace(sol, W_hat=np.zeros_like(sol.W_hat), b_hat=np.zeros_like(sol.b_hat),
                       Sigma_z_hat=np.eye(2))
        est, _ = evaluate_closed_form_elbo(Y, zero, samples=4)
        assert est == pytest.approx(-12 * np.log(2), abs=1e-12)

    def test_generated_data_above_bound(self):
        data = generate_dataset(GenConfig(N=1000, d=40, seed=3))
        Y = center_targets(data)
        sol = fit_closed_form(Y, 2)
        est, se = evaluate_closed_form_elbo(Y, sol, samples=64, seed=1)
        assert est >= sol.bound - 3 * se

    @pytest.mark.parametrize("seed", range(5))
    def test_random_small_datasets(self, seed):
        Y = random_factor_data(seed)
        sol = fit_closed_form(Y, 2)
        est, se = evaluate_closed_form_elbo(Y, sol, samples=64, seed=seed)
        assert est >= sol.bound - 3 * se

    def test_std_err_scaling(self):
        Y = random_factor_data(9, N=500, d=20)
        sol = fit_closed_form(Y, 2)
        _, se1 = evaluate_closed_form_elbo(Y, sol, samples=64, seed=0)
        _, se2 = evaluate_closed_form_elbo(Y, sol, samples=128, seed=0)
        assert se1 / se2 == pytest.approx(np.sqrt(2), rel=0.1)

    def test_single_sample_has_no_error_estimate(self):
        Y = random_factor_data(1, N=20, d=10)
        est, se = evaluate_closed_form_elbo(Y, fit_closed_form(Y, 1), samples=1)
        assert np.isfinite(est) and np.isnan(se)

    def test_bad_samples(self):
        Y = random_factor_data(1, N=20, d=10)
        with pytest.raises(PreconditionError):
            evaluate_closed_form_elbo(Y, fit_closed_form(Y, 1), samples=0)
