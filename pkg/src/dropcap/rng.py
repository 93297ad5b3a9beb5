"""Seeded random streams.

All stochastic behaviour in the package flows through RngStream, which wraps
numpy's PCG64 generator (O'Neill's permuted congruential generator, 128-bit
state, fixed published constants). PCG64 produces identical sequences for
identical seeds on every platform numpy supports, which is what the
reproducibility contracts rely on.

Child streams are derived by hashing the parent seed together with arbitrary
string/number keys using 64-bit FNV-1a, so parallel and serial schedules that
derive the same keys see the same randomness.
"""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


class RngStream:
    """A named, seedable PRNG stream (PCG64 under the hood)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, *keys) -> "RngStream":
        """Child stream keyed by (self.seed, *keys); deterministic, order-sensitive."""
        text = "|".join([str(self.seed)] + [str(k) for k in keys])
        return RngStream(fnv1a64(text.encode("utf-8")))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def uniform_range(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, n: int | None = None):
        return self._gen.integers(low, high, size=n)
