"""Deterministic SplitMix64 random stream.

Every random draw in the package (weight init, synthetic data, gradient
check instances) goes through this generator so that a seed pins a run
bit-for-bit on any platform. The k-th output of a stream is a pure
function of seed + k * gamma, which also allows drawing whole arrays in
one vectorized step without changing the stream.
"""

from __future__ import annotations

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF


def _mix_int(z: int) -> int:
    """SplitMix64 output function (two xor-shift-multiply rounds + final shift)."""
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream; identical seeds give identical streams everywhere."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix_int(self._state)

    def _bulk_u64(self, n: int) -> np.ndarray:
        # identical to n sequential next_u64 calls
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            out = _mix_array(np.uint64(self._state) + steps)
        self._state = (self._state + n * _GAMMA) & _MASK
        return out

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0**-53
        return low + (high - low) * u

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._bulk_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high). Modulo reduction; fine for the small ranges used here."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        return low + self.next_u64() % (high - low)

    def choice(self, seq):
        return seq[self.randint(0, len(seq))]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order randomized (partial Fisher-Yates)."""
        if k > n:
            raise ValueError(f"cannot sample {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = self.randint(i, n)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
