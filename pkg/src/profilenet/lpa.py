"""Latent profile analysis: constrained Gaussian mixtures fitted by EM.

Six covariance regimes cross "variances equal/varying across classes" with
"covariances zero/equal/varying across classes". Models 1, 2, 3 and 6 have
closed-form M-steps. Models 4 and 5 mix shared and class-specific entries of
the same matrix, which has no closed form, so their M-step is a few
Fisher-scoring iterations with a line search that only accepts increases of
the expected complete-data log-likelihood (a generalized EM, still monotone).
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import rankdata

from . import _kernels
from .errors import AllStartsFailed, NoConvergedModels, NotPositiveDefinite, ProfileNetError, TooFewRows
from .linalg import PIVOT_TOL, covariance_matrix, spd_factorize
from .rng import child_seed, make_rng

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class Structure(str, Enum):
    ZERO = "zero"
    EQUAL = "equal"
    VARYING = "varying"


class Parameterization(Enum):
    """The six variance/covariance regimes, numbered as in the sweep table."""

    M1 = (1, Structure.EQUAL, Structure.ZERO)
    M2 = (2, Structure.VARYING, Structure.ZERO)
    M3 = (3, Structure.EQUAL, Structure.EQUAL)
    M4 = (4, Structure.VARYING, Structure.EQUAL)
    M5 = (5, Structure.EQUAL, Structure.VARYING)
    M6 = (6, Structure.VARYING, Structure.VARYING)

    @property
    def number(self) -> int:
        return self.value[0]

    @property
    def variances(self) -> Structure:
        return self.value[1]

    @property
    def covariances(self) -> Structure:
        return self.value[2]

    @classmethod
    def from_number(cls, number: int) -> "Parameterization":
        for p in cls:
            if p.number == int(number):
                return p
        raise ValueError(f"no model number {number}")

    def __str__(self):
        return self.name


ALL_MODELS = tuple(Parameterization)


def n_free_params(param: Parameterization, K: int, d: int) -> int:
    """Free parameter count: weights, means, variances and covariances."""
    n_var = d if param.variances is Structure.EQUAL else K * d
    m = d * (d - 1) // 2
    n_cov = {Structure.ZERO: 0, Structure.EQUAL: m, Structure.VARYING: K * m}[param.covariances]
    return (K - 1) + K * d + n_var + n_cov


@dataclass
class FittedMixture:
    K: int
    param: Parameterization
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik: float
    posteriors: np.ndarray
    n_params: int
    converged: bool
    n_iter: int
    ll_history: list = field(default_factory=list)
    resets: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.posteriors.shape[0]

    def permuted(self, order: Sequence[int]) -> "FittedMixture":
        """The same fit with classes relabelled in ``order``."""
        order = np.asarray(order)
        return replace(self, weights=self.weights[order], means=self.means[order],
                       covariances=self.covariances[order], posteriors=self.posteriors[:, order])


@dataclass(frozen=True)
class FitReport:
    K: int
    param: Parameterization
    n_params: int
    n: int
    loglik: float
    aic: float
    bic: float
    kic: float
    sabic: float
    icl: float
    entropy: float


# ---------------------------------------------------------------- E-step

def _e_step(X, weights, means, covariances):
    """Responsibilities and log-likelihood, normalized in log space."""
    K, d = means.shape
    linv = np.empty((K, d, d))
    const = np.empty(K)
    eye = np.eye(d)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    for k in range(K):
        fac = spd_factorize(covariances[k])
        linv[k] = solve_triangular(fac.lower, eye, lower=True, check_finite=False)
        const[k] = logw[k] - 0.5 * (d * LOG_2PI + fac.log_det)
    tau = np.empty((X.shape[0], K))
    ll = _kernels.estep(np.ascontiguousarray(X), np.ascontiguousarray(means), linv, const, tau)
    return float(ll), tau


# ---------------------------------------------------------------- M-step

def _offdiag_index(d):
    return np.triu_indices(d, 1)


class _Layout:
    """Linear map from the free covariance parameters to each class's matrix."""

    def __init__(self, param, K, d):
        self.K, self.d = K, d
        iu, ju = _offdiag_index(d)
        m = len(iu)
        n_diag = d if param.variances is Structure.EQUAL else K * d
        if param.covariances is Structure.ZERO:
            n_off = 0
        elif param.covariances is Structure.EQUAL:
            n_off = m
        else:
            n_off = K * m
        self.n_diag, self.size = n_diag, n_diag + n_off
        self.B = np.zeros((K, d * d, self.size))
        for k in range(K):
            for j in range(d):
                idx = j if param.variances is Structure.EQUAL else k * d + j
                self.B[k, j * d + j, idx] = 1.0
            for p, (i, j) in enumerate(zip(iu, ju)):
                if param.covariances is Structure.ZERO:
                    continue
                idx = n_diag + (p if param.covariances is Structure.EQUAL else k * m + p)
                self.B[k, i * d + j, idx] = 1.0
                self.B[k, j * d + i, idx] = 1.0
        self.Bt = np.ascontiguousarray(np.swapaxes(self.B, 1, 2))

    def matrices(self, theta):
        return (self.B @ theta).reshape(self.K, self.d, self.d)

    def params(self, covariances):
        # least-squares inverse of the map; exact for conforming matrices
        stacked = self.B.reshape(-1, self.size)
        counts = stacked.sum(axis=0)
        return (stacked.T @ covariances.reshape(-1)) / counts

    def clip_diag(self, theta, floor):
        theta = theta.copy()
        per = theta[: self.n_diag].reshape(-1, self.d)
        np.maximum(per, floor, out=per)
        return theta


def _batch_inverse(covariances):
    """Log-determinants and inverses of a stack of SPD matrices."""
    try:
        L = np.linalg.cholesky(covariances)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("class covariance is not positive definite") from None
    diag = np.diagonal(L, axis1=1, axis2=2)
    if np.any(diag * diag <= PIVOT_TOL):
        raise NotPositiveDefinite("class covariance is numerically singular")
    log_det = 2.0 * np.log(diag).sum(axis=1)
    Linv = np.linalg.inv(L)
    return log_det, np.swapaxes(Linv, 1, 2) @ Linv


def _q_value(covariances, n_k, S_k):
    log_det, P = _batch_inverse(covariances)
    live = n_k > 0
    terms = n_k * (log_det + np.einsum("kij,kij->k", P, S_k))
    return -0.5 * math.fsum(terms[live])


@lru_cache(maxsize=64)
def _layout(param, K, d):
    return _Layout(param, K, d)


def _scoring_m_step(layout, n_k, S_k, start, floor, max_inner=25):
    theta = layout.clip_diag(layout.params(start), floor)
    try:
        q = _q_value(layout.matrices(theta), n_k, S_k)
    except NotPositiveDefinite:
        q = -np.inf
    d, K = layout.d, layout.K
    w = np.where(n_k > 0, n_k, 0.0)
    for _ in range(max_inner):
        _, P = _batch_inverse(layout.matrices(theta))
        G = 0.5 * w[:, None, None] * (P @ S_k @ P - P)
        grad = (layout.Bt @ G.reshape(K, -1, 1)).sum(axis=0)[:, 0]
        PP = (P[:, :, None, :, None] * P[:, None, :, None, :]).reshape(K, d * d, d * d)
        info = (layout.Bt @ ((0.5 * w)[:, None, None] * PP) @ layout.B).sum(axis=0)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = grad / np.maximum(np.diag(info), 1e-300)
        t, accepted = 1.0, False
        for _ls in range(40):
            cand = layout.clip_diag(theta + t * step, floor)
            try:
                q_new = _q_value(layout.matrices(cand), n_k, S_k)
            except NotPositiveDefinite:
                q_new = -np.inf
            if q_new > q:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        gain = q_new - q
        theta, q = cand, q_new
        if gain <= 1e-12 * (1.0 + abs(q)):
            break
    return layout.matrices(theta)


def _m_step(X, tau, param, floor, prev_cov=None):
    n, d = X.shape
    K = tau.shape[1]
    n_k = tau.sum(axis=0)
    safe = np.where(n_k > 0, n_k, 1.0)
    weights = n_k / n
    means = (tau.T @ X) / safe[:, None]
    W = np.empty((K, d, d))
    for k in range(K):
        D = X - means[k]
        W[k] = (D * tau[:, k:k + 1]).T @ D
        W[k] = 0.5 * (W[k] + W[k].T)
    S_k = W / safe[:, None, None]
    pooled = W.sum(axis=0) / n

    if param is Parameterization.M1:
        v = np.maximum(np.diag(pooled), floor)
        cov = np.broadcast_to(np.diag(v), (K, d, d)).copy()
    elif param is Parameterization.M2:
        cov = np.zeros((K, d, d))
        for k in range(K):
            cov[k] = np.diag(np.maximum(np.diag(S_k[k]), floor))
    elif param is Parameterization.M3:
        shared = pooled.copy()
        shared[np.diag_indices(d)] = np.maximum(np.diag(shared), floor)
        cov = np.broadcast_to(shared, (K, d, d)).copy()
    elif param is Parameterization.M6:
        cov = S_k.copy()
        for k in range(K):
            cov[k][np.diag_indices(d)] = np.maximum(np.diag(cov[k]), floor)
    else:
        layout = _layout(param, K, d)
        start = _structured_start(param, S_k, pooled, floor)
        if prev_cov is not None:
            try:
                if _q_value(prev_cov, n_k, S_k) > _q_value(start, n_k, S_k):
                    start = prev_cov
            except NotPositiveDefinite:
                pass
        cov = _scoring_m_step(layout, n_k, S_k, start, floor)
    return weights, means, cov


def _structured_start(param, S_k, pooled, floor):
    K, d, _ = S_k.shape
    iu = _offdiag_index(d)
    cov = np.zeros((K, d, d))
    for k in range(K):
        diag = np.diag(S_k[k]) if param.variances is Structure.VARYING else np.diag(pooled)
        cov[k][np.diag_indices(d)] = np.maximum(diag, floor)
        off = S_k[k][iu] if param.covariances is Structure.VARYING else pooled[iu]
        cov[k][iu] = off
        cov[k].T[iu] = off
    for _ in range(60):
        try:
            for k in range(K):
                spd_factorize(cov[k])
            return cov
        except NotPositiveDefinite:
            for k in range(K):
                cov[k][iu] *= 0.5
                cov[k].T[iu] *= 0.5
    return cov


# ---------------------------------------------------------------- EM driver

def _kmeanspp_labels(X, K, rng, lloyd_iter=10):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    C = np.array(centers)
    labels = np.argmin(((X[:, None, :] - C[None]) ** 2).sum(axis=2), axis=1)
    for _ in range(lloyd_iter):
        for k in range(K):
            members = labels == k
            if members.any():
                C[k] = X[members].mean(axis=0)
        new = np.argmin(((X[:, None, :] - C[None]) ** 2).sum(axis=2), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def _closed_form_single(X, param):
    n, d = X.shape
    mean = X.mean(axis=0)
    cov = covariance_matrix(X, ddof=0)
    if param.covariances is Structure.ZERO:
        cov = np.diag(np.diag(cov))
    weights = np.ones(1)
    ll, tau = _e_step(X, weights, mean[None], cov[None])
    return FittedMixture(1, param, weights, mean[None], cov[None], ll, tau,
                         n_free_params(param, 1, d), True, 1, [ll], [])


class _RunFailed(Exception):
    pass


# Callables invoked as ``hook(history, resets, tau)`` after every E-step. Test
# suites use this to audit monotonicity and posterior validity of every run.
ITERATION_HOOKS: list = []


def _em_run(X, K, param, max_iter, tol, rng, floor, max_resets=10):
    n, d = X.shape
    labels = _kmeanspp_labels(X, K, rng)
    tau = np.zeros((n, K))
    tau[np.arange(n), labels] = 1.0
    weight_floor = 1.0 / (10.0 * n)
    history, resets = [], []
    cov = None
    try:
        weights, means, cov = _m_step(X, tau, param, floor)
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            ll, tau = _e_step(X, weights, means, cov)
            if not math.isfinite(ll):
                raise _RunFailed("non-finite log-likelihood")
            history.append(ll)
            for hook in ITERATION_HOOKS:
                hook(history, resets, tau)
            just_reset = bool(resets) and resets[-1] == it - 1
            if len(history) > 1 and not just_reset and abs(history[-1] - history[-2]) < tol:
                converged = True
                break
            weights, means, cov = _m_step(X, tau, param, floor, prev_cov=cov)
            low = np.flatnonzero(weights < weight_floor)
            if low.size:
                if len(resets) >= max_resets:
                    raise _RunFailed("repeated class collapse")
                weights, means, cov = _reinitialize(X, tau, weights, means, cov, low, param)
                resets.append(it)
    except NotPositiveDefinite as exc:
        raise _RunFailed(f"degenerate covariance: {exc}") from None
    return FittedMixture(K, param, weights, means, cov, history[-1], tau,
                         n_free_params(param, K, d), converged, it, history, resets)


def _reinitialize(X, tau, weights, means, cov, low, param):
    weights, means, cov = weights.copy(), means.copy(), cov.copy()
    donor = int(np.argmax(weights))
    order = np.argsort(tau.max(axis=1), kind="stable")
    for j, k in enumerate(low):
        means[k] = X[order[j % len(order)]]
        # class-specific blocks copied from the largest class keep the structure valid
        cov[k] = cov[donor]
        weights[k] = 1.0 / len(weights)
    weights /= weights.sum()
    return weights, means, cov


def fit_em(X, K: int, param: Parameterization = Parameterization.M1, n_starts: int = 20,
           max_iter: int = 500, tol: float = 1e-6, seed: int = 0) -> FittedMixture:
    """Fit a ``K``-class mixture under ``param``; best log-likelihood of ``n_starts`` runs.

    Raises
    ------
    TooFewRows
        If ``n <= K * d``.
    AllStartsFailed
        If every start degenerates.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n <= K * d:
        raise TooFewRows(f"n={n} rows is not more than K*d={K * d}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if K == 1:
        return _closed_form_single(X, param)
    floor = 1e-6 * np.var(X, axis=0)
    best, errors = None, []
    for s in range(n_starts):
        try:
            fit = _em_run(X, K, param, max_iter, tol, make_rng(seed, s), floor)
        except _RunFailed as exc:
            errors.append(str(exc))
            continue
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise AllStartsFailed(f"all {n_starts} starts failed ({errors[0] if errors else 'no starts'})")
    return best


# ---------------------------------------------------------------- indices

def classification_entropy(tau) -> float:
    """``sum_ik -tau_ik ln tau_ik`` with ``0 ln 0 = 0``."""
    tau = np.asarray(tau, dtype=float)
    pos = tau > 0
    return float(-np.sum(tau[pos] * np.log(tau[pos])))


def fit_indices(m: FittedMixture, n: int | None = None) -> FitReport:
    n = m.n if n is None else n
    return indices_from_values(m.loglik, m.n_params, n, m.posteriors, m.K, m.param)


def indices_from_values(loglik, p, n, posteriors=None, K=None, param=None) -> FitReport:
    """Fit indices from a log-likelihood, parameter count and sample size.

    ``posteriors`` may be omitted, in which case ICL and entropy are NaN.
    """
    dev = -2.0 * loglik
    aic = dev + 2 * p
    bic = dev + p * math.log(n)
    kic = dev + 3 * (p + 1)
    sabic = dev + p * math.log((n + 2) / 24.0)
    if posteriors is not None:
        K = posteriors.shape[1] if K is None else K
        en = classification_entropy(posteriors)
        entropy = 1.0 if K == 1 else 1.0 - en / (n * math.log(K))
        entropy = min(1.0, max(0.0, entropy))
        icl = 2.0 * loglik - p * math.log(n) - 2.0 * en
    else:
        entropy = icl = float("nan")
    return FitReport(K, param, p, n, loglik, aic, bic, kic, sabic, icl, entropy)


# ---------------------------------------------------------------- sweep

@dataclass
class SweepEntry:
    K: int
    param: Parameterization
    fit: FittedMixture | None
    report: FitReport | None
    error: str | None = None

    @property
    def converged(self) -> bool:
        return self.fit is not None and self.fit.converged


@dataclass
class SweepResult:
    entries: list

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def get(self, K, param) -> SweepEntry:
        for e in self.entries:
            if e.K == K and e.param is param:
                return e
        raise KeyError((K, param))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "classes", "loglik", "aic", "bic", "kic", "sabic", "icl", "entropy", "converged"])
        for e in self.entries:
            if e.report is None:
                w.writerow([e.param.number, e.K, "", "", "", "", "", "", "", "failed"])
                continue
            r = e.report
            w.writerow([e.param.number, e.K] + [_fmt(v) for v in
                        (r.loglik, r.aic, r.bic, r.kic, r.sabic, r.icl, r.entropy)]
                       + ["true" if e.converged else "false"])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return format(x, ".10g")


def sweep_models(X, k_range: Iterable[int], param_set: Iterable[Parameterization] = ALL_MODELS,
                 n_starts: int = 20, max_iter: int = 500, tol: float = 1e-6, seed: int = 0,
                 n_jobs: int = 1) -> SweepResult:
    """Fit every ``(K, param)`` cell; failures are kept as entries with ``error`` set.

    Each cell's seed is derived from ``seed`` and the cell coordinates, so the
    result is independent of ``n_jobs``.
    """
    X = np.asarray(X, dtype=float)
    grid = [(K, p) for K in k_range for p in param_set]
    if not grid:
        raise ValueError("empty model grid")

    def run(cell):
        K, p = cell
        try:
            fit = fit_em(X, K, p, n_starts=n_starts, max_iter=max_iter, tol=tol,
                         seed=child_seed(seed, K, p.number))
        except ProfileNetError as exc:
            log.info("model %s K=%d failed: %s", p, K, exc)
            return SweepEntry(K, p, None, None, f"{type(exc).__name__}: {exc}")
        return SweepEntry(K, p, fit, fit_indices(fit, X.shape[0]))

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            entries = list(pool.map(run, grid))
    else:
        entries = [run(c) for c in grid]
    return SweepResult(entries)


class Strategy(str, Enum):
    RANK_AGGREGATE = "rank_aggregate"
    BEST_BIC = "best_bic"


def select_model(sweep: SweepResult, strategy: Strategy | str = Strategy.RANK_AGGREGATE):
    """Pick ``(K, param)`` among converged entries.

    ``rank_aggregate`` ranks entries on AIC, BIC, KIC, SABIC (lower is better)
    and ICL, entropy (higher is better), then minimizes the rank sum with ties
    broken by BIC, K and model number. ``best_bic`` minimizes BIC.
    """
    strategy = Strategy(strategy)
    ok = [e for e in sweep if e.converged and e.report is not None]
    if not ok:
        raise NoConvergedModels("no converged entry to select from")
    tiebreak = lambda e: (e.report.bic, e.K, e.param.number)  # noqa: E731
    if strategy is Strategy.BEST_BIC:
        best = min(ok, key=tiebreak)
        return best.K, best.param
    cols = [
        [e.report.aic for e in ok],
        [e.report.bic for e in ok],
        [e.report.kic for e in ok],
        [e.report.sabic for e in ok],
        [-e.report.icl for e in ok],
        [-e.report.entropy for e in ok],
    ]
    ranks = np.sum([rankdata(c, method="average") for c in cols], axis=0)
    best = min(range(len(ok)), key=lambda i: (ranks[i],) + tiebreak(ok[i]))
    return ok[best].K, ok[best].param


def classify(m: FittedMixture):
    """1-based modal class per row (first index on ties) and per-class counts."""
    idx = np.argmax(m.posteriors, axis=1)
    sizes = np.bincount(idx, minlength=m.K)
    return idx + 1, sizes
