"""
SplitMix64 pseudo-random generator

All shuffles, weight initialisation and synthetic scenes draw from this
generator so results are bit-identical across runs and platforms.
"""

import math
from typing import List

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Seed of an independent sub-stream, e.g. one per training epoch"""
    return _mix((seed + GAMMA * (stream + 1)) & MASK64)


class SplitMix64:
    """Sequential splitmix64 stream"""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return _mix(self.state)

    def next_array(self, n: int) -> np.ndarray:
        """
        Next ``n`` outputs as a uint64 array

        The k-th output only depends on ``state + (k + 1) * GAMMA``, so the
        block is computed without a Python loop and equals ``n`` calls to
        ``next_u64``.
        """
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over='ignore'):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits"""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform_range(self, low: float, high: float) -> float:
        return low + (high - low) * self.uniform()

    def uniform_array(self, n: int) -> np.ndarray:
        bits = self.next_array(n) >> np.uint64(11)
        return bits.astype(np.float64) * (1.0 / 9007199254740992.0)

    def below(self, bound: int) -> int:
        """Integer in [0, bound) by modulo reduction"""
        return self.next_u64() % bound

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller, both outputs used in order"""
        pairs = (n + 1) // 2
        u = self.uniform_array(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        out = np.empty((pairs, 2), dtype=np.float64)
        out[:, 0] = radius * np.cos(angle)
        out[:, 1] = radius * np.sin(angle)
        return out.reshape(-1)[:n]

    def permutation(self, n: int) -> List[int]:
        """Fisher-Yates shuffle of 0..n-1, j drawn as next_u64 mod (i + 1)"""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            order[i], order[j] = order[j], order[i]
        return order
