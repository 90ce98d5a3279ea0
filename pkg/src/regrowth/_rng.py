"""SplitMix64 stream shared bit-for-bit by the compiled kernels and the fallback."""

from __future__ import annotations

import os

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def seed_to_int(seed) -> int:
    """Reduce None / int / SeedSequence / Generator to a 64-bit integer seed."""
    if seed is None:
        return int.from_bytes(os.urandom(8), "little")
    if isinstance(seed, (int, np.integer)):
        return int(seed) & _MASK
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1, dtype=np.uint64)[0])
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(0, 1 << 63, dtype=np.int64))
    raise TypeError(f"unsupported seed {seed!r}")


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed=None):
        self.state = seed_to_int(seed)

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


def spawn_seeds(seed, count: int) -> list[int]:
    """Structurally forked integer seeds (independent of scheduling)."""
    ss = np.random.SeedSequence(seed_to_int(seed) if not isinstance(seed, np.random.SeedSequence) else seed.entropy)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(count)]
