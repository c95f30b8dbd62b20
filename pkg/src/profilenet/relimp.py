"""OLS, LMG relative importance and dominance analysis over predictor groups.

A predictor group is one conceptual predictor spanning one or more numeric
columns (for example the indicator block of a categorical variable). Every
subset of groups is regressed once; its R^2 is cached under the subset's
bitmask and reused by both the LMG and the dominance computations.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import DataError, NotPositiveDefinite, RankDeficient, TooFewRows, TooManyGroups, ZeroVariance
from .linalg import covariance_matrix, spd_factorize

MAX_GROUPS = 20


@dataclass(frozen=True)
class PredictorGroup:
    name: str
    columns: tuple

    def __init__(self, name, columns):
        cols = (columns,) if isinstance(columns, str) else tuple(columns)
        if not cols:
            raise DataError(f"predictor group {name!r} has no columns")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "columns", cols)


@dataclass
class OLSFit:
    intercept: float
    coefficients: np.ndarray
    r_squared: float
    n: int
    p_cols: int
    residuals: np.ndarray


def _solve_scaled(G, c, label=None):
    """Solve ``G b = c`` after rescaling ``G`` to unit diagonal (relative pivot test)."""
    diag = np.diag(G)
    if np.any(diag <= 0):
        raise RankDeficient("constant regressor column", subset=label)
    scale = np.sqrt(diag)
    try:
        fac = spd_factorize(G / np.outer(scale, scale))
    except NotPositiveDefinite:
        raise RankDeficient("regressors are collinear", subset=label) from None
    return fac.solve(c / scale) / scale


def ols_fit(y, X) -> OLSFit:
    """Least squares with an intercept via the normal equations.

    The intercept is absorbed by centering, which gives the same solution as
    appending a column of ones to ``X``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, q = X.shape
    if n <= q + 1:
        raise TooFewRows(f"{n} rows for {q} regressors plus intercept")
    C = covariance_matrix(np.column_stack([X, y]), ddof=0) * n
    if C[q, q] <= 0:
        raise ZeroVariance("response")
    beta = _solve_scaled(C[:q, :q], C[:q, q]) if q else np.empty(0)
    intercept = float(y.mean() - X.mean(axis=0) @ beta)
    resid = y - intercept - X @ beta
    sse = math.fsum(resid * resid)
    sst = C[q, q]
    r2 = min(1.0, max(0.0, 1.0 - sse / sst))
    return OLSFit(intercept, beta, r2, n, q, resid)


class SubsetR2:
    """R^2 of ``y`` on every union of predictor groups, keyed by bitmask."""

    def __init__(self, y, groups: Sequence[PredictorGroup], data):
        self.groups = list(groups)
        g = len(self.groups)
        if g > MAX_GROUPS:
            raise TooManyGroups(f"{g} groups exceed the limit of {MAX_GROUPS}")
        seen = set()
        for grp in self.groups:
            if seen & set(grp.columns):
                raise DataError(f"group {grp.name!r} shares columns with another group")
            seen |= set(grp.columns)
        cols, owner = [], []
        for i, grp in enumerate(self.groups):
            for c in grp.columns:
                cols.append(_column(data, c))
                owner.append(i)
        y = np.asarray(y, dtype=float)
        M = np.column_stack(cols + [y]) if cols else y[:, None]
        n = len(y)
        if n <= len(cols) + 1:
            raise TooFewRows(f"{n} rows for {len(cols)} regressors plus intercept")
        C = covariance_matrix(M, ddof=0) * n
        q = len(cols)
        if C[q, q] <= 0:
            raise ZeroVariance("response")
        self._G, self._c, self._syy = C[:q, :q], C[:q, q], C[q, q]
        self._owner = np.array(owner, dtype=int)
        self.g = g
        self.values = np.full(1 << g, np.nan)
        self.values[0] = 0.0
        for mask in range(1, 1 << g):
            self.values[mask] = self._compute(mask)

    def _compute(self, mask):
        sel = np.flatnonzero([(mask >> int(o)) & 1 for o in self._owner])
        label = [self.groups[i].name for i in range(self.g) if (mask >> i) & 1]
        G = self._G[np.ix_(sel, sel)]
        c = self._c[sel]
        b = _solve_scaled(G, c, label=label)
        r2 = float(c @ b) / self._syy
        return min(1.0, max(0.0, r2))

    def __getitem__(self, mask) -> float:
        return float(self.values[mask])

    @property
    def full(self) -> float:
        return self[(1 << self.g) - 1]


def _column(data, name):
    if isinstance(data, Dataset):
        return data.matrix([name])[:, 0]
    return np.asarray(data[name], dtype=float)


@dataclass
class ImportanceReport:
    response: str
    full_r_squared: float
    group_names: list
    shares: np.ndarray
    pct_of_r2: np.ndarray

    def display_shares(self) -> np.ndarray:
        """Shares with numerical negatives shown as 0."""
        return np.maximum(self.shares, 0.0)


def _shapley_weights(g):
    return [math.factorial(s) * math.factorial(g - s - 1) / math.factorial(g) for s in range(g)]


def lmg_from_table(table: SubsetR2) -> np.ndarray:
    g = table.g
    w = _shapley_weights(g)
    shares = np.zeros(g)
    for j in range(g):
        bit = 1 << j
        acc = []
        for mask in range(1 << g):
            if mask & bit:
                continue
            acc.append(w[bin(mask).count("1")] * (table[mask | bit] - table[mask]))
        shares[j] = math.fsum(acc)
    return shares


def lmg_shares(y, groups: Sequence[PredictorGroup], data, response: str = "y") -> ImportanceReport:
    """Average sequential R^2 gain of each group over all orderings."""
    if isinstance(y, str):
        response, y = y, _column(data, y)
    table = SubsetR2(y, groups, data)
    shares = lmg_from_table(table)
    full = table.full
    pct = 100.0 * shares / full if full > 0 else np.full(len(shares), np.nan)
    return ImportanceReport(response, full, [grp.name for grp in groups], shares, pct)


@dataclass
class DominanceReport:
    group_names: list
    complete: np.ndarray
    conditional: np.ndarray
    general: np.ndarray
    conditional_values: np.ndarray
    general_weights: np.ndarray

    def pairs(self):
        """``(a, b, complete, conditional, general)`` for every ordered pair ``a != b``."""
        names = self.group_names
        return [(names[j], names[k], bool(self.complete[j, k]), bool(self.conditional[j, k]),
                 bool(self.general[j, k]))
                for j in range(len(names)) for k in range(len(names)) if j != k]


def _dominates(a, b, eps):
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a >= b - eps) and np.any(a > b + eps))


def dominance_analysis(y, groups: Sequence[PredictorGroup], data, eps: float = 1e-12) -> DominanceReport:
    """Complete, conditional and general dominance between predictor groups.

    ``conditional_values[j, s]`` is group ``j``'s mean R^2 gain over subsets of
    size ``s`` drawn from the other groups; ``general_weights`` averages those
    over ``s``.
    """
    if isinstance(y, str):
        y = _column(data, y)
    table = SubsetR2(y, groups, data)
    g = table.g
    full = (1 << g) - 1
    cond = np.zeros((g, g))
    for j in range(g):
        bit = 1 << j
        others = [i for i in range(g) if i != j]
        for s in range(g):
            gains = []
            for combo in combinations(others, s):
                mask = sum(1 << i for i in combo)
                gains.append(table[mask | bit] - table[mask])
            cond[j, s] = math.fsum(gains) / len(gains)
    general_weights = cond.mean(axis=1)

    complete = np.zeros((g, g), dtype=bool)
    conditional = np.zeros((g, g), dtype=bool)
    general = np.zeros((g, g), dtype=bool)
    for j in range(g):
        for k in range(g):
            if j == k:
                continue
            rest = full & ~(1 << j) & ~(1 << k)
            inc_j, inc_k = [], []
            sub = rest
            while True:
                inc_j.append(table[sub | (1 << j)] - table[sub])
                inc_k.append(table[sub | (1 << k)] - table[sub])
                if sub == 0:
                    break
                sub = (sub - 1) & rest
            complete[j, k] = _dominates(inc_j, inc_k, eps)
            conditional[j, k] = _dominates(cond[j], cond[k], eps)
            general[j, k] = general_weights[j] > general_weights[k] + eps
    return DominanceReport([grp.name for grp in groups], complete, conditional, general,
                           cond, general_weights)


@dataclass
class ImportanceMatrix:
    reports: list
    group_names: list

    @property
    def mean_influence(self) -> np.ndarray:
        return np.mean([r.pct_of_r2 for r in self.reports], axis=0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor"] + [f"{r.response} (R2: {r.full_r_squared:.6f})" for r in self.reports]
                   + ["mean_influence"])
        mean = self.mean_influence
        for i, name in enumerate(self.group_names):
            w.writerow([name] + [format(r.pct_of_r2[i], ".10g") for r in self.reports]
                       + [format(mean[i], ".10g")])
        return buf.getvalue()


def importance_matrix(responses: Mapping[str, np.ndarray], groups: Sequence[PredictorGroup], data
                      ) -> ImportanceMatrix:
    """LMG table: one column per response plus the mean percentage across responses."""
    reports = [lmg_shares(np.asarray(y, dtype=float), groups, data, response=name)
               for name, y in responses.items()]
    return ImportanceMatrix(reports, [grp.name for grp in groups])
