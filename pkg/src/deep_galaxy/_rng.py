import numpy as np

# stream tags: keep independent consumers of one user seed apart
INIT = 0
SHUFFLE = 1
SPLIT = 2
SYNTH = 3


def derive_rng(seed, *keys):
    """Generator keyed by ``(seed, *keys)``; same key -> same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))
