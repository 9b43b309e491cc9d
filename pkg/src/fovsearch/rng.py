"""Hierarchical random-number streams.

Every stochastic component draws from a substream addressed by a path of
integers under one root seed.  Substreams are independent of execution
order, so trials can run serially, in any order, or across processes and
still produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

# stream-kind tags used as the last path component
ENV_STREAM = 0
POLICY_STREAM = 1

DEFAULT_SEED = 0x5EED


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream at `path` under `root_seed`.

    The same (root_seed, path) always yields the same stream; distinct
    paths yield statistically independent streams.
    """
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)
