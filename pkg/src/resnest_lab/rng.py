"""Seeded random streams split by purpose.

Every stream is a Philox-4x64 counter-based generator keyed by
``(seed, purpose, *index)`` through :class:`numpy.random.SeedSequence`, so
weight draws never share state with data draws or shuffles, and results do
not depend on platform defaults.
"""

import numpy as np

PURPOSES = {
    "weights": 1,
    "data": 2,
    "noise": 3,
    "teacher": 4,
    "shuffle": 5,
    "phi": 6,
    "init": 7,
    "probe": 8,
    "inputs": 9,
}


def generator(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``purpose`` (and optional sub-indices)."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown rng purpose {purpose!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = (PURPOSES[purpose],) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
