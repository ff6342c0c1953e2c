"""Analytic optimum of the quadratic lower bound on the Bernoulli-VAE ELBO.

With ``y = x - 1/2`` and ``C = 4 I_d + W W^T`` the bound reads

    Lhat(W, b) = mean_i[-1/2 (4y_i - b)^T C^{-1} (4y_i - b)] - 1/2 log|C| + d/2
               = 1/2 (d - log|C| - tr(C^{-1} S_b)),

``S_b`` being the second moment of ``4y - b``.  It is maximised by
``b = 4 mean(y)`` and ``W = U_k (K_k - 4 I)^{1/2}`` (eigenvalues clamped below
at 4), and the encoder optimum is ``Sigma_z = (I + W^T W / 4)^{-1}``,
``mu_z = Sigma_z W^T (y - b/4)``.

C is never formed on the default path: ``log|C|`` goes through the k x k
determinant ``|I_k + W^T W / 4|`` and ``C^{-1}`` through Woodbury,
``C^{-1} = (I - W (4 I_k + W^T W)^{-1} W^T) / 4``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import BinaryDataset, check_binary
from .errors import PreconditionError
from .numerics import SymEigen, chol_logdet_spd, eig_sym_desc, spd_inverse, spd_solve

LOG4 = np.log(4.0)
ELIGIBILITY_THRESHOLD = 4.0


@dataclass(frozen=True)
class CenteredData:
    """Observations shifted to {-1/2, +1/2}."""

    Y: np.ndarray

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class ClosedFormSolution:
    W_hat: np.ndarray
    b_hat: np.ndarray
    Sigma_z_hat: np.ndarray
    eigenvalues: np.ndarray
    bound: float
    kappa: int

    @property
    def d(self) -> int:
        return self.W_hat.shape[0]

    def encoder_weights(self) -> np.ndarray:
        """Weights of the mu-layer acting on x: ``Sigma_z W^T``."""
        return self.Sigma_z_hat @ self.W_hat.T

    def encoder_bias(self) -> np.ndarray:
        """Bias of the mu-layer acting on x: ``Sigma_z W^T (-1/2 - b/4)``."""
        return self.encoder_weights() @ (-0.5 - 0.25 * self.b_hat)

    def bound_on(self, data) -> float:
        return elbo_lower_bound(self.W_hat, self.b_hat, _centered(data))


def _centered(data) -> CenteredData:
    if isinstance(data, CenteredData):
        return data
    return center_targets(data)


def center_targets(X) -> CenteredData:
    if isinstance(X, BinaryDataset):
        X = X.X
    X = check_binary(X)
    return CenteredData(Y=X.astype(np.float64) - 0.5)


def sample_mean_b(Y: CenteredData) -> np.ndarray:
    if Y.N < 1:
        raise PreconditionError("cannot take the mean of an empty dataset")
    return 4.0 * Y.Y.mean(axis=0)


def sample_cov_S(Y: CenteredData, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (Y.d,):
        raise PreconditionError(f"b has shape {b.shape}, expected ({Y.d},)")
    Z = 4.0 * Y.Y - b
    S = Z.T @ Z / Y.N
    return 0.5 * (S + S.T)


def optimal_W(S, kappa: int, eig: SymEigen | None = None) -> np.ndarray:
    """``U_k (K_k - 4 I)^{1/2}`` with the rotation fixed to the identity."""
    if eig is None:
        eig = eig_sym_desc(S)
    d = eig.eigenvalues.shape[0]
    if not 0 <= kappa <= d:
        raise PreconditionError(f"kappa={kappa} must lie in [0, {d}]")
    lam = eig.eigenvalues[:kappa]
    scale = np.sqrt(np.maximum(lam, ELIGIBILITY_THRESHOLD) - ELIGIBILITY_THRESHOLD)
    W = eig.eigenvectors[:, :kappa] * scale
    W[:, scale == 0.0] = 0.0  # exact zeros, no -0.0
    return W


def optimal_sigma_z(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return spd_inverse(np.eye(W.shape[1]) + 0.25 * (W.T @ W))


def optimal_mu_z(W, b, x) -> np.ndarray:
    """Encoder optimum for one observation (d,) or a batch (n, d)."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x)
    single = x.ndim == 1
    xb = check_binary(np.atleast_2d(x))
    centred = xb - 0.5 - 0.25 * np.asarray(b, dtype=np.float64)
    mu = centred @ W @ optimal_sigma_z(W)  # Sigma_z symmetric
    return mu[0] if single else mu


def log_det_C(W, method: str = "woodbury") -> float:
    W = np.asarray(W, dtype=np.float64)
    d, k = W.shape
    if method == "dense":
        return chol_logdet_spd(4.0 * np.eye(d) + W @ W.T)
    # |4 I_d + W W^T| = 4^d |I_k + W^T W / 4|
    return d * LOG4 + chol_logdet_spd(np.eye(k) + 0.25 * (W.T @ W))


def _woodbury_core(W) -> np.ndarray:
    k = W.shape[1]
    return spd_inverse(4.0 * np.eye(k) + W.T @ W)


def trace_Cinv_S(W, S, method: str = "woodbury") -> float:
    W = np.asarray(W, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if method == "dense":
        d = W.shape[0]
        return float(np.trace(spd_solve(4.0 * np.eye(d) + W @ W.T, S)))
    M_inv = _woodbury_core(W)
    return float(0.25 * (np.trace(S) - np.sum(M_inv * (W.T @ S @ W))))


def bound_trace_form(W, S, method: str = "woodbury") -> float:
    """``1/2 (d - log|C| - tr(C^{-1} S))`` for a precomputed second moment S."""
    d = np.asarray(W).shape[0]
    return 0.5 * (d - log_det_C(W, method) - trace_Cinv_S(W, S, method))


def quadratic_terms(W, b, Y: CenteredData, method: str = "woodbury") -> np.ndarray:
    """Per-observation ``(4y_i - b)^T C^{-1} (4y_i - b)``."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.shape[0] != Y.d or b.shape != (Y.d,):
        raise PreconditionError(f"shape mismatch: W {W.shape}, b {b.shape}, data d={Y.d}")
    Z = 4.0 * Y.Y - b
    if method == "dense":
        C = 4.0 * np.eye(Y.d) + W @ W.T
        return np.sum(Z.T * spd_solve(C, Z.T), axis=0)
    P = Z @ W
    return 0.25 * (np.sum(Z * Z, axis=1) - np.sum((P @ _woodbury_core(W)) * P, axis=1))


def elbo_lower_bound(W, b, Y: CenteredData, method: str = "woodbury") -> float:
    Y = _centered(Y)
    q = quadratic_terms(W, b, Y, method)
    return float(-0.5 * np.mean(q) - 0.5 * log_det_C(W, method) + 0.5 * Y.d)


def select_latent_dim(S=None, eig: SymEigen | None = None) -> tuple[int, np.ndarray]:
    """Eigenvalues of S strictly above 4 and their count."""
    if eig is None:
        eig = eig_sym_desc(S)
    eligible = eig.eigenvalues[eig.eigenvalues > ELIGIBILITY_THRESHOLD].copy()
    return int(eligible.size), eligible


def fit_closed_form(data, kappa: int, eig_method: str = "auto") -> ClosedFormSolution:
    """Closed-form optimum (b, W, Sigma_z) and the bound value on ``data``."""
    Y = _centered(data)
    b = sample_mean_b(Y)
    S = sample_cov_S(Y, b)
    eig = eig_sym_desc(S, method=eig_method)
    W = optimal_W(S, kappa, eig=eig)
    return ClosedFormSolution(
        W_hat=W,
        b_hat=b,
        Sigma_z_hat=optimal_sigma_z(W),
        eigenvalues=np.array(eig.eigenvalues),
        bound=elbo_lower_bound(W, b, Y),
        kappa=kappa,
    )
