"""Counter-based random number generation for reproducible problem data.

The generator is a counter-mode SplitMix64: the i-th raw 64-bit word of a
stream with seed ``s`` is

    mix64((s + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64)

where ``mix64`` is the finalizer

    v ^= v >> 30;  v *= 0xBF58476D1CE4E5B9
    v ^= v >> 27;  v *= 0x94D049BB133111EB
    v ^= v >> 31

(all arithmetic mod 2^64).  Uniform doubles in [0, 1) take the top 53 bits:
``(word >> 11) * 2^-53``.  Gaussians come from Box-Muller on consecutive
uniform pairs (u1, u2), with u1 shifted into (0, 1] to keep log(u1) finite:

    u1 = ((word >> 11) + 1) * 2^-53
    z0 = sqrt(-2 ln u1) * cos(2 pi u2),  z1 = sqrt(-2 ln u1) * sin(2 pi u2)

Because words are addressed by counter, any prefix of the stream is
independent of how draws are batched, and a second implementation of the
constants above reproduces the streams bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0**-53


def _mix64(v: np.ndarray) -> np.ndarray:
    v = (v ^ (v >> np.uint64(30))) * _MIX1
    v = (v ^ (v >> np.uint64(27))) * _MIX2
    return v ^ (v >> np.uint64(31))


class CounterRng:
    """Deterministic counter-mode RNG over a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def raw(self, count: int) -> np.ndarray:
        """Next `count` raw 64-bit words of the stream."""
        idx = np.arange(self._counter + 1, self._counter + count + 1, dtype=np.uint64)
        self._counter += count
        return _mix64(self.seed + idx * _GAMMA)

    def uniform(self, size: int | tuple = (), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53
        out = low + (high - low) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, size: int | tuple = ()) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        w = self.raw(2 * pairs)
        u1 = ((w[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (w[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = z[:n]
        return out.reshape(shape) if shape else float(out[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n); swap index j = floor(u * (i+1))."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def derive(self, index: int) -> "CounterRng":
        """Independent child stream; seed = mix64(seed XOR (index+1)*gamma)."""
        k = np.array([index + 1], dtype=np.uint64) * _GAMMA
        child = _mix64(self.seed ^ k)[0]
        return CounterRng(int(child))
