"""Portable seeded random numbers.

SplitMix64 is used everywhere the package needs reproducible randomness
(weight init, synthetic scenes). Output ``n`` of a generator seeded with
``s`` is ``mix(s + (n + 1) * GOLDEN)``. That makes the stream
counter-based, so blocks of it can be drawn with vectorized numpy
arithmetic and still match a scalar reference bit for bit.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64_scalar(state: int) -> tuple[int, int]:
    """Reference scalar step: returns ``(new_state, output)``."""
    state = (state + GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            out = _mix(z)
        self.state = (self.state + n * GOLDEN) & _MASK
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` doubles in ``[low, high)`` built from the top 53 bits."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; consumes ``2 * n`` outputs."""
        raw = self.next_u64(2 * n) >> np.uint64(11)
        u1 = (raw[0::2].astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
        u2 = raw[1::2].astype(np.float64) * 2.0**-53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """Integers in ``[low, high)`` via floor of a uniform draw."""
        u = self.uniform(n)
        return np.minimum(low + np.floor(u * (high - low)).astype(np.int64), high - 1)

    def fork(self, key: int) -> "SplitMix64":
        """Independent child stream derived from the current state and ``key``."""
        _, out = splitmix64_scalar((self.state ^ (key * 0xD1B54A32D192ED03)) & _MASK)
        return SplitMix64(out)
