"""Gaussian graphical models: partial-correlation networks estimated with the
graphical lasso, penalty chosen by EBIC, plus centrality and bootstrap tools.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import NodeMismatch, ProfileNetError, TooFewRows
from .linalg import correlation_matrix, invert_spd, spd_factorize, symmetrize
from .rng import make_rng

log = logging.getLogger(__name__)

SNAP = 1e-10


def partial_correlations(S) -> np.ndarray:
    """Partial correlations ``-T_ij / sqrt(T_ii T_jj)`` from ``T = S^-1``; zero diagonal."""
    return _pcor_from_precision(invert_spd(S))


def _pcor_from_precision(theta):
    d = np.sqrt(np.diag(theta))
    P = -theta / np.outer(d, d)
    np.fill_diagonal(P, 0.0)
    return symmetrize(0.5 * (P + P.T))


@dataclass
class GlassoResult:
    precision: np.ndarray
    covariance: np.ndarray
    lam: float
    n_iter: int
    converged: bool
    coefs: np.ndarray = field(repr=False, default=None)


def glasso_fit(S, lam: float, tol: float = 1e-8, max_iter: int = 1000, warm: GlassoResult | None = None,
               inner_tol: float | None = None, inner_max: int = 1000) -> GlassoResult:
    """Maximize ``log det T - tr(S T) - lam * sum_{i != j} |T_ij|``.

    Block coordinate descent over columns of the covariance estimate, each
    column's lasso solved by cyclic soft-thresholding. The diagonal is not
    penalized. Stops when no entry of the covariance estimate moves by more
    than ``tol`` during a sweep; a non-converged result is returned with
    ``converged=False``.
    """
    S = np.ascontiguousarray(S, dtype=float)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    d = S.shape[0]
    if warm is not None:
        W = np.array(warm.covariance, dtype=float, order="C")
        B = np.array(warm.coefs, dtype=float, order="C")
    else:
        W = S.copy()
        B = np.zeros((d, d))
    inner_tol = tol * 1e-2 if inner_tol is None else inner_tol
    n_iter, converged = _kernels.glasso_cd(S, float(lam), W, B, float(tol), int(max_iter),
                                           float(inner_tol), int(inner_max))
    if not converged:
        log.warning("glasso did not converge in %d sweeps at lambda=%g", max_iter, lam)
    theta = np.empty((d, d))
    for j in range(d):
        others = np.arange(d) != j
        tjj = 1.0 / (W[j, j] - W[others, j] @ B[others, j])
        theta[j, j] = tjj
        theta[others, j] = -B[others, j] * tjj
    theta = 0.5 * (theta + theta.T)
    return GlassoResult(symmetrize(theta), W, float(lam), int(n_iter), bool(converged), B)


def glasso_objective(theta, S, lam) -> float:
    theta = np.asarray(theta)
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return spd_factorize(theta).log_det - float(np.sum(S * theta)) - lam * off


def _count_edges(theta) -> int:
    return int(np.count_nonzero(np.triu(theta, 1)))


def ebic_score(theta, S, n: int, gamma: float = 0.5) -> float:
    """``-2 L + E ln n + 4 gamma E ln d`` with ``L = n/2 (log det T - tr(S T))``."""
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    E = _count_edges(theta)
    L = 0.5 * n * (spd_factorize(theta).log_det - float(np.sum(S * theta)))
    return -2.0 * L + E * math.log(n) + 4.0 * gamma * E * math.log(d)


def _snap(theta):
    """Zero precision entries whose partial correlation is below ``SNAP``."""
    pcor = _pcor_from_precision(theta)
    small = np.abs(pcor) < SNAP
    np.fill_diagonal(small, False)
    theta = theta.copy()
    theta[small] = 0.0
    pcor[small] = 0.0
    return theta, pcor


@dataclass
class Network:
    node_names: list
    weights: np.ndarray
    precision: np.ndarray
    lam: float
    n: int
    gamma: float = 0.5
    lambdas: np.ndarray = field(default=None, repr=False)
    edge_counts: np.ndarray = field(default=None, repr=False)
    ebic: np.ndarray = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return len(self.node_names)

    def edges(self):
        """``(a, b, w)`` for each nonzero edge, in row-major upper-triangle order."""
        out = []
        for i in range(self.d):
            for j in range(i + 1, self.d):
                if self.weights[i, j] != 0.0:
                    out.append((self.node_names[i], self.node_names[j], float(self.weights[i, j])))
        return out

    def edge_list_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_a", "node_b", "weight"])
        for a, b, wt in self.edges():
            w.writerow([a, b, format(wt, ".10g")])
        return buf.getvalue()

    def permuted(self, order) -> "Network":
        order = np.asarray(order)
        ix = np.ix_(order, order)
        return Network([self.node_names[i] for i in order], self.weights[ix], self.precision[ix],
                       self.lam, self.n, self.gamma)


def network_from_weights(weights, node_names=None) -> Network:
    """Wrap a symmetric weight matrix (no estimation) for centrality and export."""
    W = np.array(weights, dtype=float)
    np.fill_diagonal(W, 0.0)
    names = list(node_names) if node_names is not None else [f"v{i + 1}" for i in range(len(W))]
    return Network(names, symmetrize(W), np.full_like(W, np.nan), float("nan"), 0)


def estimate_network(X, gamma: float = 0.5, grid_size: int = 100, names: Sequence[str] | None = None,
                     tol: float = 1e-8) -> Network:
    """EBIC-selected graphical lasso network on the correlation matrix of ``X``."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    names = list(names) if names is not None else [f"v{i + 1}" for i in range(d)]
    if n < d + 10:
        raise TooFewRows(f"{n} rows for {d} variables (need at least d + 10)")
    S = correlation_matrix(X, names=names)
    lam_max = float(np.max(np.abs(S - np.diag(np.diag(S))))) if d > 1 else 0.0
    if lam_max == 0.0:
        theta = invert_spd(S)
        theta, pcor = _snap(theta)
        return Network(names, pcor, theta, 0.0, n, gamma, np.array([0.0]), np.array([0]),
                       np.array([ebic_score(theta, S, n, gamma)]))
    lambdas = np.logspace(math.log10(lam_max), math.log10(0.01 * lam_max), grid_size)
    warm = None
    best = None
    counts, scores = [], []
    for lam in lambdas:
        res = glasso_fit(S, lam, tol=tol, warm=warm)
        warm = res
        theta, pcor = _snap(res.precision)
        score = ebic_score(theta, S, n, gamma)
        counts.append(_count_edges(theta))
        scores.append(score)
        if best is None or score < best[0]:
            best = (score, lam, theta, pcor)
    _, lam, theta, pcor = best
    return Network(names, pcor, theta, float(lam), n, gamma, lambdas, np.array(counts), np.array(scores))


# ---------------------------------------------------------------- centrality

def strength(net: Network, signed: bool = False) -> np.ndarray:
    """Sum of absolute (or signed) incident edge weights."""
    W = net.weights if signed else np.abs(net.weights)
    return np.array([math.fsum(row) for row in W])


def betweenness(net: Network) -> np.ndarray:
    """Brandes betweenness over shortest paths with edge length ``1/|w|``."""
    return np.asarray(_kernels.brandes(np.ascontiguousarray(net.weights, dtype=float), 1e-12))


@dataclass
class CentralityReport:
    node_names: list
    strength: np.ndarray
    betweenness: np.ndarray

    def zscores(self):
        def z(v):
            sd = v.std(ddof=1) if len(v) > 1 else 0.0
            return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)
        return z(self.strength), z(self.betweenness)


def centrality(net: Network) -> CentralityReport:
    return CentralityReport(list(net.node_names), strength(net), betweenness(net))


# ---------------------------------------------------------------- bootstrap

@dataclass
class BootstrapReport:
    B: int
    node_names: list
    edges: list
    point: np.ndarray
    samples: np.ndarray = field(repr=False)
    low: np.ndarray
    high: np.ndarray
    n_failed: int
    difference_significant: np.ndarray = field(repr=False)

    def edge_rows(self):
        return [(a, b, float(self.point[e]), float(self.low[e]), float(self.high[e]))
                for e, (a, b) in enumerate(self.edges)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_a", "node_b", "estimate", "ci_low", "ci_high", "n_replicates", "n_failed"])
        for a, b, pt, lo, hi in self.edge_rows():
            w.writerow([a, b, format(pt, ".10g"), format(lo, ".10g"), format(hi, ".10g"),
                        self.samples.shape[0], self.n_failed])
        return buf.getvalue()

    def significant_pairs(self):
        out = []
        m = len(self.edges)
        for e1 in range(m):
            for e2 in range(e1 + 1, m):
                if self.difference_significant[e1, e2]:
                    out.append((self.edges[e1], self.edges[e2]))
        return out


def bootstrap_network(X, B: int, gamma: float = 0.5, seed: int = 0, names=None, grid_size: int = 100,
                      n_jobs: int = 1) -> BootstrapReport:
    """Case-resampling bootstrap of every edge weight (penalty re-selected per replicate)."""
    if B < 1:
        raise ValueError("B must be at least 1")
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    original = estimate_network(X, gamma, grid_size, names)
    iu = np.triu_indices(d, 1)
    edges = [(original.node_names[i], original.node_names[j]) for i, j in zip(*iu)]

    def replicate(b):
        rows = make_rng(seed, b).integers(0, n, size=n)
        try:
            net = estimate_network(X[rows], gamma, grid_size, names)
        except ProfileNetError as exc:
            log.info("bootstrap replicate %d failed: %s", b, exc)
            return None
        return net.weights[iu]

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(replicate, range(B)))
    else:
        results = [replicate(b) for b in range(B)]
    ok = [r for r in results if r is not None]
    n_failed = B - len(ok)
    samples = np.array(ok) if ok else np.empty((0, len(edges)))
    if ok:
        low = np.percentile(samples, 2.5, axis=0)
        high = np.percentile(samples, 97.5, axis=0)
        diff = samples[:, :, None] - samples[:, None, :]
        dlo = np.percentile(diff, 2.5, axis=0)
        dhi = np.percentile(diff, 97.5, axis=0)
        sig = (dlo > 0) | (dhi < 0)
        np.fill_diagonal(sig, False)
    else:
        low = high = np.full(len(edges), np.nan)
        sig = np.zeros((len(edges), len(edges)), dtype=bool)
    return BootstrapReport(B, original.node_names, edges, original.weights[iu], samples, low, high,
                           n_failed, sig)


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class EdgeDifference:
    node_a: str
    node_b: str
    weight_a: float
    weight_b: float
    difference: float
    pattern: str


def compare_networks(a: Network, b: Network) -> list[EdgeDifference]:
    """Edge-by-edge comparison; ``pattern`` is both, only-a, only-b or neither."""
    if list(a.node_names) != list(b.node_names):
        raise NodeMismatch("networks have different nodes")
    out = []
    for i in range(a.d):
        for j in range(i + 1, a.d):
            wa, wb = float(a.weights[i, j]), float(b.weights[i, j])
            pattern = {(True, True): "both", (True, False): "only-a",
                       (False, True): "only-b", (False, False): "neither"}[(wa != 0.0, wb != 0.0)]
            out.append(EdgeDifference(a.node_names[i], a.node_names[j], wa, wb, wa - wb, pattern))
    return out


def comparison_to_csv(rows: Sequence[EdgeDifference]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_a", "node_b", "weight_a", "weight_b", "difference", "pattern"])
    for r in rows:
        w.writerow([r.node_a, r.node_b, format(r.weight_a, ".10g"), format(r.weight_b, ".10g"),
                    format(r.difference, ".10g"), r.pattern])
    return buf.getvalue()
