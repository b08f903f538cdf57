"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, *path)``. A path is a tuple of small integers such as
``(walk_index, block)``, so any batch of work can be regenerated on its own,
in any order and on any worker.
"""
from __future__ import annotations

import numpy as np

# stream families; the first path component after the seed
WALK = 1
MC_ESCAPE = 2
MC_SPHERE = 3
MC_PAIRS = 4
BROWNIAN = 5
NONINTERSECT = 6
SAMPLING = 7
BOOTSTRAP = 8


def stream(seed: int, *path: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be a non-negative 64-bit integer")
    key = np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
