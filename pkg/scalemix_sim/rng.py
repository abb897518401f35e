"""Reproducible random streams.

Every random draw in the package comes from a Philox (counter-based, 64-bit) generator
keyed by the master seed plus a tuple of integers naming the replicate and its purpose.
Identical keys give identical streams on every platform, and distinct keys give
independent streams, so replicates can be simulated in any order or in parallel.
"""
from enum import IntEnum

import numpy as np

from scalemix_sim.errors import DomainError


class Purpose(IntEnum):
    R_FIELD = 1
    W_FIELD = 2
    PARAMETERS = 3
    TRAINING_PANEL = 4
    SPLIT = 5
    INIT = 6
    SHUFFLE = 7
    BOOTSTRAP = 8
    FOLD = 9
    MONTE_CARLO = 10
    STORM = 11
    FIXTURE = 12
    VERIFY = 13
    YEAR_BLOCKS = 14


def _check_key(value):
    value = int(value)
    if value < 0 or value >= 2 ** 64:
        raise DomainError("Seeds and stream keys must be unsigned 64-bit integers, got " + str(value))
    return value


def stream(seed, *keys):
    """Generator for (seed, *keys); keys are non-negative integers such as Purpose members."""
    entropy = [_check_key(seed)] + [_check_key(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *keys):
    """A 64-bit child seed, for handing a replicate its own master seed."""
    return int(stream(seed, *keys).integers(0, 2 ** 63, dtype=np.int64))
