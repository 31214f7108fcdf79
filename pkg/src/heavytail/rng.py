"""Counter-derived random streams.

Every random consumer gets its own Philox generator keyed by
(root seed, counter...). Work split across threads therefore draws the
same numbers regardless of how many workers run it.
"""
from __future__ import annotations

import os

import numpy as np

THREADS_ENV = "HEAVYTAIL_THREADS"


def stream(seed: int, *counter: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in counter))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return stream(0 if rng is None else int(rng))
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from a parent stream (for fanning out work)."""
    return int(rng.integers(0, 2**63 - 1))


def default_threads() -> int:
    val = os.environ.get(THREADS_ENV)
    if val:
        try:
            return max(1, int(val))
        except ValueError:
            pass
    return 1
