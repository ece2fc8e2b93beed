"""Deterministic, language-portable randomness for sampling steps.

Everything here is fully pinned (SplitMix64 + FNV-1a 64 + backward
Fisher-Yates) so that a re-implementation in any language reproduces the
same triplet samples bit for bit.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of ``text``."""
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


class SplitMix64:
    """SplitMix64 generator (golden-gamma increment, 64-bit avalanche)."""

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by modulo reduction.

        Modulo bias is negligible for the tiny bounds used here and keeps
        the recipe trivial to port.
        """
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound


def shuffled(items: list, rng: SplitMix64) -> list:
    """Return a Fisher-Yates shuffle of ``items`` (input left untouched).

    Backward variant: i runs from len-1 down to 1, j = next_u64() mod (i+1),
    swap a[i] and a[j]. The orientation is part of the portability contract.
    """
    a = list(items)
    for i in range(len(a) - 1, 0, -1):
        j = rng.next_below(i + 1)
        a[i], a[j] = a[j], a[i]
    return a
