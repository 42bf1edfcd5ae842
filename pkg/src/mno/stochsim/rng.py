import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for the (seed, *key) coordinate.

    Streams are derived from the key alone, never from draw order, so any
    subset of trajectories can be regenerated in any order or thread layout.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
