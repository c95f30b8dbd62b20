"""Seeded, splittable random streams.

Every stream is numpy's PCG64 bit generator keyed by a ``SeedSequence`` built
from ``(seed, spawn_key)``. A child stream for a sub-task (a sweep cell, a
bootstrap replicate, an EM start) is obtained by extending the spawn key with
the task's integer coordinates, so results never depend on scheduling order.
"""
from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64/SeedSequence"


def make_rng(seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed) & ((1 << 128) - 1),
                                 spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(seed: int, *key: int) -> int:
    """Derive a 63-bit integer seed for a sub-task."""
    seq = np.random.SeedSequence(entropy=int(seed) & ((1 << 128) - 1),
                                 spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0]) >> 1
