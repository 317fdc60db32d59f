"""Portable deterministic randomness.

Every stochastic choice in this package (oracle noise, synthetic corpus
sampling, split shuffling) flows through SplitMix64, a 64-bit generator with
a published reference implementation and no platform- or interpreter-version
dependence. Gaussian draws use the basic Box-Muller transform on two
consecutive uniforms, with no cached spare, so a draw is a pure function of
the stream position. Fixing a seed therefore fixes every byte of output,
which the determinism tests rely on.
"""

from __future__ import annotations

import math
from collections.abc import MutableSequence, Sequence
from typing import TypeVar

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")


def _scramble(z: int) -> int:
    # SplitMix64 output function (Steele, Lea & Flood 2014).
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def scramble(z: int) -> int:
    """Avalanche a 64-bit integer into a well-mixed token."""
    return _scramble(z & _MASK64)


def mix(*parts: int) -> int:
    """Fold integers into one 64-bit key; order-sensitive, avalanche-mixed."""
    h = _GOLDEN
    for p in parts:
        h = _scramble((h + (p & _MASK64)) & _MASK64)
        h = (h + _GOLDEN) & _MASK64
    return _scramble(h)


class PortableRng:
    """Seeded SplitMix64 stream with the handful of draws the package needs."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _scramble(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in [low, high], both ends inclusive, unbiased."""
        if high < low:
            raise ValueError("empty range")
        n = high - low + 1
        limit = ((1 << 64) // n) * n
        while True:
            u = self.next_u64()
            if u < limit:
                return low + u % n

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Standard Box-Muller; always consumes exactly two uniforms."""
        u1 = self.random()
        u2 = self.random()
        if u1 <= 0.0:
            u1 = 2.0 ** -53
        r = math.sqrt(-2.0 * math.log(u1))
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def choice(self, seq: Sequence[T]) -> T:
        if not seq:
            raise ValueError("empty sequence")
        return seq[self.randint(0, len(seq) - 1)]

    def shuffle(self, seq: MutableSequence[T]) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(0, i)
            seq[i], seq[j] = seq[j], seq[i]


def gauss_at(key: int, mu: float = 0.0, sigma: float = 1.0) -> float:
    """One Gaussian draw fully determined by ``key``; no stream state."""
    return PortableRng(key).gauss(mu, sigma)
