"""Counter-based random streams.

Every stochastic operation derives its generator by hashing
``(seed, replicate, component, purpose)`` through ``SeedSequence`` into a
Philox counter-based generator.  Streams are therefore independent of
execution order and thread count: replicate r always sees the same bits.
"""

import numpy as np

# Purpose tags keep streams of different constructions decoupled even when
# they share (seed, replicate, component).
SPECTRAL_NOISE = 1
CONVOLUTION_NOISE = 2
MARKOV_NOISE = 3
DATA_SIMULATION = 4
GENERIC = 0


def stream(seed, *path):
    """Independent ``numpy.random.Generator`` for (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(x) for x in path))
    return np.random.Generator(np.random.Philox(ss))
