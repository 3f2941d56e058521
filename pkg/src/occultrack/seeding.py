"""Keyed random streams.

Every random draw in the package comes from a Philox counter-based generator
whose key is derived from ``(seed, stream, *indices)``. A stream therefore
depends only on its key, never on how many other streams were consumed
before it, which keeps trials and frames reproducible in any order.
"""

from __future__ import annotations

import numpy as np

# stream identifiers
CATALOG = 0
TRAJECTORY = 1
NOISE = 2
RANSAC = 3
TRIAL = 4


def keyed_generator(seed: int, stream: int, *indices: int) -> np.random.Generator:
    """Return an independent generator for the key ``(seed, stream, *indices)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, stream: int, *indices: int) -> int:
    """Derive a 63-bit integer seed for the key ``(seed, stream, *indices)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, indices)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
