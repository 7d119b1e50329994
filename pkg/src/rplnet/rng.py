"""Named deterministic random streams.

Every stochastic step in the package (weight init, splits, shuffles) draws
from its own counter-based Philox stream keyed by integer context values,
so runs are reproducible and streams never alias across purposes.
"""

from __future__ import annotations

import numpy as np

_PURPOSES = {
    "encoder-init": 1,
    "rp-init": 2,
    "proto-init": 3,
    "split": 4,
    "shuffle": 5,
    "head-init": 6,
}


def named_rng(purpose: str, *keys: int) -> np.random.Generator:
    """A generator keyed by (purpose, *keys); same keys give the same stream."""
    tag = _PURPOSES[purpose]
    seq = np.random.SeedSequence(entropy=tag, spawn_key=tuple(int(k) & 0xFFFFFFFFFFFFFFFF for k in keys))
    return np.random.Generator(np.random.Philox(seq))
