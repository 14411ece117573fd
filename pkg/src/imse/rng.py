"""Reproducible random streams.

Every Monte Carlo loop draws from a counter-based Philox stream keyed by
(seed, stream index), so trial-level parallelism and scheduling order can
never change results: stream i is the same bit sequence no matter which
worker runs it or when.
"""

import numpy as np


def trial_stream(seed, trial=0, salt=0):
    """Independent Generator for one (seed, trial) pair."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = np.array([np.uint64(seed), np.uint64(trial)], dtype=np.uint64)
    bg = np.random.Philox(key=key, counter=int(salt))
    return np.random.Generator(bg)
