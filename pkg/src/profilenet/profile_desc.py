"""Profile description with v-tests and membership-probability correlations.

The quantitative v-test compares a profile mean with the overall mean under
sampling without replacement; the categorical v-test converts a two-sided
hypergeometric p-value into a signed normal quantile.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import t as student_t

from .dataset import ColumnKind, Dataset
from .errors import DegenerateGroup, InvalidCounts, ZeroVariance
from .linalg import correlation_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantVTest:
    variable: str
    profile: int
    mean_in_profile: float
    mean_overall: float
    v: float
    p: float


@dataclass(frozen=True)
class QualVTest:
    variable: str
    modality: str
    profile: int
    pct_in_profile: float
    pct_overall: float
    v: float
    p: float


def vtest_quantitative(values, in_profile) -> tuple[float, float]:
    """Return ``(v, p)`` for the profile mean of ``values`` against the overall mean."""
    x = np.asarray(values, dtype=float)
    mask = np.asarray(in_profile, dtype=bool)
    N = len(x)
    n_k = int(mask.sum())
    if n_k == 0 or n_k == N:
        raise DegenerateGroup(f"profile has {n_k} of {N} rows")
    mean = math.fsum(x) / N
    var = math.fsum((x - mean) ** 2) / N
    if var <= 0.0 or var <= 1e-26 * mean * mean:
        raise ZeroVariance("values")
    mean_k = math.fsum(x[mask]) / n_k
    v = (mean_k - mean) / math.sqrt(var / n_k * (N - n_k) / (N - 1))
    p = float(2.0 * ndtr(-abs(v)))
    return v, p


def _log_choose(n, k):
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _hypergeom_logpmf(x, N, n_j, n_k):
    return _log_choose(n_j, x) + _log_choose(N - n_j, n_k - x) - _log_choose(N, n_k)


def _log_sum(logs):
    top = max(logs)
    return top + math.log(math.fsum(math.exp(v - top) for v in logs))


def vtest_categorical(N: int, n_j: int, n_k: int, n_kj: int) -> tuple[float, float]:
    """Return ``(v, p)`` for ``n_kj`` marked draws among ``n_k`` from ``N`` holding ``n_j`` marked."""
    N, n_j, n_k, n_kj = (int(v) for v in (N, n_j, n_k, n_kj))
    if min(N, n_j, n_k, n_kj) < 0 or n_j > N or n_k > N or n_kj > min(n_j, n_k) \
            or n_k - n_kj > N - n_j:
        raise InvalidCounts(f"inconsistent counts N={N} n_j={n_j} n_k={n_k} n_kj={n_kj}")
    lo, hi = max(0, n_k - (N - n_j)), min(n_j, n_k)
    upper = _log_sum([_hypergeom_logpmf(x, N, n_j, n_k) for x in range(n_kj, hi + 1)])
    lower = _log_sum([_hypergeom_logpmf(x, N, n_j, n_k) for x in range(lo, n_kj + 1)])
    p = min(1.0, 2.0 * math.exp(min(upper, lower)))
    if n_k == 0 or N == 0:
        return 0.0, 1.0
    diff = n_kj * N - n_j * n_k  # sign of n_kj/n_k - n_j/N in exact integers
    sign = (diff > 0) - (diff < 0)
    # Phi^-1(1 - p/2) written as -Phi^-1(p/2) keeps precision for tiny p
    v = sign * float(-ndtri(p / 2.0)) if sign else 0.0
    return v, p


@dataclass
class DescriptionRow:
    profile: int
    variable: str
    modality: str
    v: float
    p: float
    in_profile: float
    overall: float
    flagged: bool

    @property
    def flag(self) -> str:
        if not self.flagged:
            return ""
        return "+" if self.v > 0 else "-"


@dataclass
class DescriptionReport:
    rows: list
    alpha: float

    def for_profile(self, profile):
        return [r for r in self.rows if r.profile == profile]

    def flagged(self):
        return [r for r in self.rows if r.flagged]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["profile", "variable", "modality", "v", "p",
                    "mean_or_pct_in_profile", "mean_or_pct_overall", "flag"])
        for r in self.rows:
            w.writerow([r.profile, r.variable, r.modality, _fmt(r.v), _fmt(r.p),
                        _fmt(r.in_profile), _fmt(r.overall), r.flag])
        return buf.getvalue()


def _fmt(x):
    return format(x, ".10g")


def describe_profiles(ds: Dataset, labels, illustrative: Sequence[str], alpha: float = 0.05
                      ) -> DescriptionReport:
    """v-tests of every profile against every illustrative variable.

    Within a profile, quantitative rows come first, then modality rows, each
    block ordered by decreasing v. Rows with ``p <= alpha`` are flagged.
    """
    labels = np.asarray(labels)
    profiles = np.unique(labels)
    rows = []
    if len(profiles) < 2:
        log.warning("all rows belong to one profile; no contrasts to describe")
        return DescriptionReport([], alpha)
    N = len(labels)
    for g in profiles:
        mask = labels == g
        n_k = int(mask.sum())
        quant, qual = [], []
        for var in illustrative:
            if ds.kind(var) is ColumnKind.NUMERIC:
                x = ds[var]
                try:
                    v, p = vtest_quantitative(x, mask)
                except (DegenerateGroup, ZeroVariance) as exc:
                    log.warning("skipping %s for profile %s: %s", var, g, exc)
                    continue
                quant.append(DescriptionRow(int(g), var, "", v, p, float(np.mean(x[mask])),
                                            float(np.mean(x)), p <= alpha))
            else:
                col = ds[var]
                for level in sorted(set(col)):
                    marked = col == level
                    n_j = int(marked.sum())
                    n_kj = int((marked & mask).sum())
                    v, p = vtest_categorical(N, n_j, n_k, n_kj)
                    qual.append(DescriptionRow(int(g), var, level, v, p, 100.0 * n_kj / n_k,
                                               100.0 * n_j / N, p <= alpha))
        for block in (quant, qual):
            block.sort(key=lambda r: (-r.v, r.variable, r.modality))
            rows.extend(block)
    return DescriptionReport(rows, alpha)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def correlation_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of Pearson ``r`` from ``t = r sqrt((n-2)/(1-r^2))``."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * student_t.sf(abs(t), n - 2))


@dataclass(frozen=True)
class MembershipCorrelation:
    profile: int
    variable: str
    r: float
    p: float

    @property
    def stars(self) -> str:
        return significance_stars(self.p)


def membership_correlations(posteriors, variables, names: Sequence[str]) -> list[MembershipCorrelation]:
    """Pearson correlation of each posterior column with each numeric variable."""
    tau = np.asarray(posteriors, dtype=float)
    V = np.asarray(variables, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    n, K = tau.shape
    labels = [f"profile {k + 1}" for k in range(K)] + list(names)
    R = correlation_matrix(np.column_stack([tau, V]), names=labels)
    out = []
    for k in range(K):
        for j, name in enumerate(names):
            r = float(R[k, K + j])
            out.append(MembershipCorrelation(k + 1, name, r, correlation_pvalue(r, n)))
    return out


def correlations_to_csv(rows: Sequence[MembershipCorrelation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["profile", "variable", "r", "p", "stars"])
    for c in rows:
        w.writerow([c.profile, c.variable, _fmt(c.r), _fmt(c.p), c.stars])
    return buf.getvalue()
