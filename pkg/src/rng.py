"""Seeded random streams for chains, references and projections."""

from enum import IntEnum

import numpy as np

RNG_ALGORITHM = "numpy PCG64 seeded by SeedSequence(entropy=master_seed, spawn_key=(index, purpose))"


class Purpose(IntEnum):
    """Second spawn-key component; separates streams that share an index."""
    CHAIN = 0
    REFERENCE = 1
    PROJECTIONS = 2
    TASK = 3
    BIAS = 4
    PRIOR = 5


def derive_rng(master_seed: int, index: int, purpose: int = Purpose.CHAIN) -> np.random.Generator:
    """Independent generator for (master seed, index, purpose).

    Same inputs give the same stream; distinct spawn keys give statistically
    independent streams.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index), int(purpose)))
    return np.random.Generator(np.random.PCG64(seq))
