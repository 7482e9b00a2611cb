"""Counter-based, splittable random streams.

Every stochastic routine takes a seed plus a tuple of integer keys; the
stream for a given (seed, keys) pair is fixed regardless of how work is
split across processes.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def streams(seed: int, n: int, *keys: int) -> list[np.random.Generator]:
    return [stream(seed, *keys, i) for i in range(n)]
