"""Bernoulli-VAE objective: likelihood, KL, Monte-Carlo ELBO, Taylor pieces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .closedform import CenteredData, ClosedFormSolution
from .errors import PreconditionError
from .numerics import chol_logdet_spd

PROB_EPS = 1e-12
LOG2 = np.log(2.0)


@dataclass(frozen=True)
class ElboTerms:
    recon: float
    kl: float
    neg_elbo: float


def softplus(z):
    """``log(1 + e^z)``, stable for large |z|."""
    return np.logaddexp(0.0, z)


def bernoulli_log_likelihood(x, p):
    """Sum over the last axis of ``x log p + (1-x) log(1-p)``, p clamped to [eps, 1-eps]."""
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.isnan(x).any() or np.isnan(p).any():
        raise PreconditionError("NaN passed to bernoulli_log_likelihood")
    if x.shape != p.shape:
        raise PreconditionError(f"shape mismatch: x {x.shape}, p {p.shape}")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return np.sum(x * np.log(pc) + (1.0 - x) * np.log1p(-pc), axis=-1)


def bernoulli_log_likelihood_logits(x, logits):
    """Same quantity from pre-sigmoid logits: ``x a - softplus(a)``."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(logits, dtype=np.float64)
    return np.sum(x * a - softplus(a), axis=-1)


def kl_diag_gaussian(mu, log_var):
    """KL(N(mu, diag e^log_var) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    return 0.5 * np.sum(np.exp(log_var) - log_var + mu * mu - 1.0, axis=-1)


def kl_full_gaussian(mu, Sigma) -> np.ndarray:
    """KL(N(mu, Sigma) || N(0, I)) for a shared covariance and batched means."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    Sigma = np.asarray(Sigma, dtype=np.float64)
    k = Sigma.shape[0]
    const = np.trace(Sigma) - chol_logdet_spd(Sigma) - k
    return 0.5 * (const + np.sum(mu * mu, axis=-1))


def negative_elbo_batch(x_batch, mu_batch, log_var_batch, p_batch) -> float:
    """Mean over the batch of ``KL - log-likelihood``.

    ``p_batch`` is (B, d) for one draw per datum or (S, B, d) for S draws,
    in which case the reconstruction term is averaged over draws.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    p = np.asarray(p_batch, dtype=np.float64)
    mu = np.asarray(mu_batch, dtype=np.float64)
    lv = np.asarray(log_var_batch, dtype=np.float64)
    if x.ndim != 2 or mu.shape != lv.shape or mu.shape[0] != x.shape[0]:
        raise PreconditionError(
            f"inconsistent batch shapes: x {x.shape}, mu {mu.shape}, log_var {lv.shape}"
        )
    if p.shape[-2:] != x.shape or p.ndim not in (2, 3):
        raise PreconditionError(f"p has shape {p.shape}, expected (..., {x.shape[0]}, {x.shape[1]})")
    ll = bernoulli_log_likelihood(np.broadcast_to(x, p.shape), p)
    if p.ndim == 3:
        ll = ll.mean(axis=0)
    return float(np.mean(kl_diag_gaussian(mu, lv) - ll))


def taylor_g(z):
    """``g(z) = log(1 - sigmoid(z))``, its degree-2 expansion at 0, and the remainder."""
    z = np.asarray(z, dtype=np.float64)
    exact = -softplus(z)
    degree2 = -LOG2 - z / 2.0 - z * z / 8.0
    return exact, degree2, exact - degree2


def g_third_derivative(z):
    """``e^z (e^z - 1) / (1 + e^z)^3`` written as ``s (1 - s) (2s - 1)``."""
    s = 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))
    return s * (1.0 - s) * (2.0 * s - 1.0)


def evaluate_closed_form_elbo(
    Y: CenteredData,
    sol: ClosedFormSolution,
    samples: int = 64,
    seed: int = 0,
    chunk: int = 256,
) -> tuple[float, float]:
    """Monte-Carlo average ELBO with the analytic encoder and affine decoder.

    Returns the estimate and its Monte-Carlo standard error (the data are
    held fixed; only the latent draws are random).  With a single draw per
    datum the standard error is NaN.
    """
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    W, b, Sigma = sol.W_hat, sol.b_hat, sol.Sigma_z_hat
    k = W.shape[1]
    X = Y.Y + 0.5
    mu = (Y.Y - 0.25 * b) @ W @ Sigma
    kl = kl_full_gaussian(mu, Sigma)
    L = np.linalg.cholesky(Sigma) if k else np.zeros((0, 0))
    rng = np.random.Generator(np.random.PCG64(seed))
    recon_mean = np.empty(Y.N)
    recon_var = np.empty(Y.N)
    for start in range(0, Y.N, chunk):
        sl = slice(start, min(start + chunk, Y.N))
        n = sl.stop - sl.start
        eps = rng.standard_normal((samples, n, k))
        z = mu[sl] + eps @ L.T
        ll = bernoulli_log_likelihood_logits(X[sl], z @ W.T + b)  # (samples, n)
        recon_mean[sl] = ll.mean(axis=0)
        recon_var[sl] = ll.var(axis=0, ddof=1) if samples > 1 else np.nan
    per_datum = recon_mean - kl
    estimate = float(np.mean(per_datum))
    std_err = float(np.sqrt(np.sum(recon_var / samples)) / Y.N)
    return estimate, std_err
