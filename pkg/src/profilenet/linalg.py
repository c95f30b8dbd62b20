"""Dense symmetric linear algebra and correlation primitives.

Symmetric matrices are plain ``numpy.ndarray`` objects; every constructor in
this module returns an exactly symmetric array (upper triangle mirrored).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput, NotPositiveDefinite, TooFewRows, ZeroVariance

PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class SpdFactorization:
    """Cholesky factor ``lower`` (``A = L L^T``) and ``log_det = ln det A``."""

    lower: np.ndarray
    log_det: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        from scipy.linalg import cho_solve

        return cho_solve((self.lower, True), b)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle onto the lower one."""
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("matrix contains non-finite entries")
    return X


def _pairwise_crossprod(D: np.ndarray) -> np.ndarray:
    # Column-wise products reduced with numpy's pairwise summation (contiguous 1-d sums).
    D = np.asfortranarray(D)
    d = D.shape[1]
    out = np.empty((d, d))
    for j in range(d):
        cj = D[:, j]
        for k in range(j, d):
            out[j, k] = out[k, j] = np.sum(cj * D[:, k])
    return out


def covariance_matrix(X, ddof: int = 1) -> np.ndarray:
    """Sample covariance of the columns of ``X``.

    Parameters
    ----------
    X : array_like, shape (n, d)
    ddof : {0, 1}
        Divisor is ``n - ddof``.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise TooFewRows("covariance needs at least 2 rows")
    if ddof not in (0, 1):
        raise ValueError("ddof must be 0 or 1")
    mean = np.array([np.sum(X[:, j]) for j in range(X.shape[1])]) / n
    cov = _pairwise_crossprod(X - mean) / (n - ddof)
    np.fill_diagonal(cov, np.maximum(np.diag(cov), 0.0))
    return cov


def spd_factorize(A) -> SpdFactorization:
    """Cholesky factorization with a pivot tolerance of ``1e-12``.

    Raises
    ------
    NotPositiveDefinite
        If ``A`` is indefinite or any pivot ``L[i, i]**2`` is ``<= 1e-12``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix contains non-finite entries")
    try:
        L = np.linalg.cholesky(symmetrize(A))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    diag = np.diag(L)
    if np.any(diag * diag <= PIVOT_TOL) or not np.all(np.isfinite(L)):
        raise NotPositiveDefinite("pivot below tolerance")
    return SpdFactorization(lower=L, log_det=float(2.0 * np.sum(np.log(diag))))


def invert_spd(A) -> np.ndarray:
    """Inverse of a positive definite matrix via its Cholesky factor."""
    fac = spd_factorize(A)
    inv = fac.solve(np.eye(fac.lower.shape[0]))
    return symmetrize(0.5 * (inv + inv.T))


def correlation_matrix(X, names=None) -> np.ndarray:
    """Pearson correlation matrix of the columns of ``X`` (unit diagonal)."""
    X = _as_matrix(X)
    if X.shape[0] < 3:
        raise TooFewRows("correlation needs at least 3 rows")
    cov = covariance_matrix(X, ddof=1)
    sd = np.sqrt(np.diag(cov))
    for j, s in enumerate(sd):
        # relative test: a constant column leaves only rounding noise
        scale = np.max(np.abs(X[:, j]))
        if s == 0.0 or s <= 1e-13 * scale:
            raise ZeroVariance(names[j] if names is not None else j)
    R = cov / np.outer(sd, sd)
    R = np.clip(R, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return symmetrize(R)
