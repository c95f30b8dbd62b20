"""Synthetic survey data with a known 5-profile structure.

Three classification scores come from a 5-class Gaussian mixture; the
illustrative variables depend on the profile and on the within-profile
deviations, so profile description, importance and networks all have signal.
"""
from __future__ import annotations

import numpy as np

from .dataset import Dataset, MixtureSpec, generate_mixture_sample
from .rng import make_rng

CLASSIFICATION = ["commit_org", "commit_coll", "commit_prof"]
QUANT = ["satisfaction", "turnover", "identification", "engagement", "age"]
QUAL = ["country", "tenure", "position", "company_size"]

PROFILE_MEANS = np.array([
    [-6.0, -6.0, -6.0],
    [-6.0, 0.0, 0.0],
    [0.0, -6.0, 0.0],
    [0.0, 0.0, 6.0],
    [6.0, 6.0, 6.0],
])
PROFILE_WEIGHTS = np.array([159, 84, 179, 281, 147]) / 850.0


def mixture_spec() -> MixtureSpec:
    cov = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.3], [0.2, 0.3, 1.0]])
    return MixtureSpec(PROFILE_WEIGHTS, PROFILE_MEANS, np.array([cov] * 5))


def make_survey_dataset(n: int = 1000, seed: int = 2024) -> tuple[Dataset, np.ndarray]:
    """Return the dataset and the 1-based generating profile of each row."""
    base, labels = generate_mixture_sample(mixture_spec(), n, seed, names=CLASSIFICATION)
    rng = make_rng(seed, 1)
    X = base.matrix(CLASSIFICATION)
    dev = X - PROFILE_MEANS[labels - 1]
    level = X.mean(axis=1) / 6.0
    e = rng.standard_normal((n, 4))
    engagement = 0.6 * level + 0.5 * dev[:, 0] + e[:, 0]
    satisfaction = 0.5 * level + 0.6 * engagement + 0.3 * dev[:, 1] + e[:, 1]
    identification = 0.4 * level + 0.5 * satisfaction + 0.4 * dev[:, 0] + e[:, 2]
    turnover = -0.5 * level - 0.5 * engagement + 0.3 * identification + e[:, 3]
    age = np.round(41.0 + 2.0 * (labels == 3) - 2.0 * (labels == 1) + 9.0 * rng.standard_normal(n))

    country_p = {1: [0.10, 0.45, 0.25, 0.20], 2: [0.05, 0.20, 0.40, 0.35], 3: [0.10, 0.25, 0.30, 0.35],
                 4: [0.10, 0.20, 0.25, 0.45], 5: [0.10, 0.15, 0.25, 0.50]}
    countries = np.array(["BE", "CA", "CH", "FR"])
    tenure_levels = np.array(["<1", "1-5", "5-10", ">10"])
    country = np.empty(n, dtype=object)
    tenure = np.empty(n, dtype=object)
    for g in range(1, 6):
        idx = np.flatnonzero(labels == g)
        country[idx] = countries[rng.choice(4, size=idx.size, p=country_p[g])]
        tp = [0.25, 0.35, 0.15, 0.25] if g == 1 else [0.08, 0.32, 0.28, 0.32]
        tenure[idx] = tenure_levels[rng.choice(4, size=idx.size, p=tp)]
    position = np.where(rng.random(n) < 0.15 + 0.15 * (labels == 4), "Manager", "Employee")
    size = np.where(rng.random(n) < 0.25 - 0.1 * (labels == 5), ">1000", "<=1000")

    columns = {name: X[:, j] for j, name in enumerate(CLASSIFICATION)}
    columns.update(satisfaction=satisfaction, turnover=turnover, identification=identification,
                   engagement=engagement, age=age, country=country, tenure=tenure,
                   position=position, company_size=size)
    return Dataset(columns), labels
