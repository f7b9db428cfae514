"""Seedable, platform-independent random stream (SplitMix64).

The generator keeps a 64-bit counter ``state``.  Draw number ``i`` (1-based,
counted from construction) is

    z  = state0 + i * 0x9E3779B97F4A7C15            (mod 2**64)
    z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9        (mod 2**64)
    z  = (z ^ (z >> 27)) * 0x94D049BB133111EB        (mod 2**64)
    z  =  z ^ (z >> 31)

and a uniform double in [0, 1) is ``(z >> 11) * 2**-53``.  Because each draw
depends only on its index, blocks of draws vectorize exactly and any
implementation of the recurrence reproduces the stream bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def subseed(seed: int, name: str) -> int:
    """Derive a named 64-bit child seed so independent streams never overlap."""
    digest = hashlib.sha256(f"{seed & _MASK64}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Single-owner SplitMix64 stream.  Never share one instance across workers."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._state = self.seed
        self.draws = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + idx * _GAMMA
            out = _mix(z)
        self._state = (self._state + n * int(_GAMMA)) & _MASK64
        self.draws += n
        return out

    def uniform(self, n: int | None = None):
        """Uniform doubles in [0, 1); a scalar when ``n`` is None."""
        vals = (self.next_u64(1 if n is None else n) >> np.uint64(11)).astype(np.float64)
        vals *= 2.0 ** -53
        return float(vals[0]) if n is None else vals

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller over pairs of uniforms."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def integers(self, high: int, n: int) -> np.ndarray:
        return np.floor(self.uniform(n) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def child(self, name: str) -> "Rng":
        return Rng(subseed(self.seed, name))
