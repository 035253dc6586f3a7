"""Hierarchical random streams.

A run has a single root seed; every stochastic stage derives its own
independent generator from (root seed, stage tags).  Adding a new stage, or
reordering calls, never perturbs the draws of existing stages — unlike
sharing one generator and consuming from it in program order.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *tags: object) -> np.random.Generator:
    """Return a generator for the stage identified by ``tags``.

    The same (seed, tags) always yields the same stream, on every platform.
    Tags are hashed with CRC-32 into a ``SeedSequence`` spawn key, so streams
    for different tags are statistically independent.
    """
    key = tuple(zlib.crc32(repr(t).encode("utf-8")) for t in tags)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
