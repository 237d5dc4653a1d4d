"""Reproducible random streams.

Every stream is a Philox generator (counter based) keyed by a root seed and a
tuple of integer keys, so parallel cells can draw independent streams without
coordinating.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for ``(seed, keys)``; signed seeds wrap to 64 bits."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
