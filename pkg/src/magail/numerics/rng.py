"""Counter-based, splittable random streams.

Every stochastic call site asks for its own stream by a key path, e.g.
``stream(seed, "rollout", iteration, b)``. Streams are Philox generators
keyed through ``SeedSequence``, so the same path always yields the same draws
and distinct paths are statistically independent.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path) -> int:
    """A 32-bit integer seed for the given key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
