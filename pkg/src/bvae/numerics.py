"""Dense symmetric / SPD linear algebra in float64.

The eigensolver is a cyclic Jacobi method using the round-robin (parallel)
pair ordering: every round rotates d/2 disjoint index pairs at once, which
is exactly equivalent to applying those rotations one after another because
they commute.  Past ``JACOBI_MAX_DIM`` the ``auto`` method hands over to
LAPACK ``syevd`` (via :func:`numpy.linalg.eigh`), because a Python-level
Jacobi sweep at d=1000 costs tens of seconds.  Both paths share the same
ordering and sign normalization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import DomainError, NumericalError, PreconditionError

JACOBI_MAX_DIM = 256
MAX_SWEEPS = 100
OFF_TOL = 1e-12
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class SymEigen:
    """Eigenvalues in descending order, eigenvectors as matching columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


def _as_square(S, name: str = "matrix") -> np.ndarray:
    A = np.asarray(S, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise PreconditionError(f"{name} has non-finite entries")
    return A


def _check_symmetric(A: np.ndarray) -> None:
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL:
        raise PreconditionError(
            f"matrix is not symmetric (max |A - A^T| = {np.max(np.abs(A - A.T)):.3e})"
        )


def _round_robin(d: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair schedule covering every (p, q), p < q, exactly once per sweep."""
    m = d + (d % 2)
    rest = np.arange(1, m)
    schedule = []
    for r in range(m - 1):
        order = np.concatenate(([0], np.roll(rest, r)))
        P = order[: m // 2]
        Q = order[m // 2:][::-1]
        keep = (P < d) & (Q < d)  # drop the phantom player when d is odd
        P, Q = P[keep], Q[keep]
        schedule.append((np.minimum(P, Q), np.maximum(P, Q)))
    return schedule


def _rotate_rows(M: np.ndarray, P, Q, c, s) -> None:
    Mp = M[P]
    Mq = M[Q]
    M[P] = c[:, None] * Mp - s[:, None] * Mq
    M[Q] = s[:, None] * Mp + c[:, None] * Mq


def _jacobi(A: np.ndarray, tol: float = OFF_TOL, max_sweeps: int = MAX_SWEEPS):
    A = np.array(A, dtype=np.float64, order="C", copy=True)
    d = A.shape[0]
    Vt = np.eye(d)
    scale = np.linalg.norm(A)
    schedule = _round_robin(d)
    for sweep in range(max_sweeps + 1):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            return np.diag(A).copy(), np.ascontiguousarray(Vt.T)
        if sweep == max_sweeps:
            break
        for P, Q in schedule:
            apq = A[P, Q]
            app = A[P, P]
            aqq = A[Q, Q]
            active = np.abs(apq) > 1e-18 * np.sqrt(np.abs(app * aqq))
            if not active.any():
                continue
            P, Q = P[active], Q[active]
            apq, app, aqq = apq[active], app[active], aqq[active]
            theta = (aqq - app) / (2.0 * apq)
            huge = np.abs(theta) > 1e100
            th = np.where(huge, 1.0, theta)
            t = np.where(
                huge,
                0.5 / np.where(huge, theta, 1.0),
                np.where(th >= 0, 1.0, -1.0) / (np.abs(th) + np.sqrt(th * th + 1.0)),
            )
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # A <- J^T A J as row op, transpose, row op (A stays symmetric)
            _rotate_rows(A, P, Q, c, s)
            A = np.ascontiguousarray(A.T)
            _rotate_rows(A, P, Q, c, s)
            A[P, Q] = 0.0
            A[Q, P] = 0.0
            _rotate_rows(Vt, P, Q, c, s)
    raise NumericalError(
        f"Jacobi did not converge after {max_sweeps} sweeps "
        f"(off-diagonal norm {off:.3e}, tolerance {tol * scale:.3e})",
        iterations=max_sweeps,
    )


def _normalize(w: np.ndarray, U: np.ndarray) -> SymEigen:
    order = np.argsort(-w, kind="stable")
    w = w[order]
    U = U[:, order]
    if U.size:
        lead = np.argmax(np.abs(U), axis=0)  # first index on ties
        signs = np.where(U[lead, np.arange(U.shape[1])] < 0, -1.0, 1.0)
        U = U * signs
    w.setflags(write=False)
    U.setflags(write=False)
    return SymEigen(eigenvalues=w, eigenvectors=U)


def eig_sym_desc(S, method: str = "auto") -> SymEigen:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_DIM``).  Each eigenvector is signed so that its entry of
    largest magnitude is nonnegative.
    """
    A = _as_square(S)
    _check_symmetric(A)
    A = 0.5 * (A + A.T)
    d = A.shape[0]
    if method == "auto":
        method = "jacobi" if d <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, U = _jacobi(A)
    elif method == "lapack":
        w, U = np.linalg.eigh(A)
    else:
        raise PreconditionError(f"unknown eigensolver method {method!r}")
    return _normalize(np.asarray(w, dtype=np.float64), np.asarray(U, dtype=np.float64))


def _cholesky(A) -> np.ndarray:
    A = _as_square(A)
    _check_symmetric(A)
    if A.shape[0] == 0:
        return A.copy()
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise DomainError(
            f"matrix is not positive definite: pivot {info - 1} (0-based) is <= 0",
            pivot=info - 1,
        )
    if info < 0:
        raise PreconditionError(f"dpotrf rejected argument {-info}")
    return L


def chol_logdet_spd(A) -> float:
    """log|A| of a symmetric positive definite matrix via Cholesky."""
    L = _cholesky(A)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def spd_solve(A, B) -> np.ndarray:
    """Solve A X = B for SPD ``A``; ``B`` may be a vector or a matrix."""
    L = _cholesky(A)
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != L.shape[0]:
        raise PreconditionError(f"shape mismatch: A is {L.shape}, B is {B.shape}")
    if L.shape[0] == 0:
        return B.copy()
    X, info = lapack.dpotrs(L, B, lower=1)
    if info != 0:
        raise PreconditionError(f"dpotrs rejected argument {-info}")
    return X


def spd_inverse(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    X = spd_solve(A, np.eye(A.shape[0]))
    return 0.5 * (X + X.T)
