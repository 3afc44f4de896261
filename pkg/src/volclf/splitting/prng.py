"""SplitMix64: a tiny, fully specified generator for platform-independent shuffles.

Split plans must be byte-identical everywhere, so they do not depend on the
stream layout of any library generator.
"""

from __future__ import annotations

from typing import MutableSequence

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection, free of modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates, walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(seed: int, *salt: int) -> int:
    """Deterministic sub-seed: one SplitMix64 step per salt value."""
    state = int(seed) & MASK
    for s in salt:
        state = SplitMix64(state ^ (int(s) & MASK)).next_u64()
    return state
