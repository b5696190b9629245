"""Seeded random number generation.

All stochastic operations in this package take an explicit seed (or an
already-constructed Generator).  Streams are built on the counter-based
Philox bit generator, so results are reproducible bit-for-bit for a given
seed regardless of call interleaving elsewhere.
"""

import numpy as np


def rng_from_seed(seed):
    """Return a numpy Generator for ``seed``.

    ``seed`` may be an int, an existing Generator (returned unchanged), or
    None for nondeterministic entropy.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))
