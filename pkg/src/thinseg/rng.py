"""Deterministic pseudo-random numbers for data generation and training.

The generator is xoshiro256** running ``LANES`` independent streams in
parallel (vectorized over numpy uint64), seeded from a single splitmix64
sequence. The output stream is defined as the row-major traversal of the
(step, lane) output matrix; every bulk request consumes whole steps and
discards the unused tail of the last one, so the generator state is always
exactly the 4 x LANES lane words. This discipline (splitmix64 seeding,
LANES=64, row-major collation, tail discard, Box-Muller for gaussians,
``floor(u * n)`` for bounded integers) is the portable definition of the
stream: any implementation that follows it reproduces the same draws.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

LANES = 64


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z = z ^ (z >> 31)
    return state, z


def derive_seed(seed: int, index: int) -> int:
    """Derive a per-item seed from a master seed and an item index."""
    _, z = splitmix64((seed ^ ((index + 1) * _GOLDEN)) & _MASK)
    return z


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Rng:
    """Lane-parallel xoshiro256** generator with a splitmix64-seeded state."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        state = self.seed
        words = np.empty((4, LANES), dtype=np.uint64)
        for lane in range(LANES):
            for w in range(4):
                state, z = splitmix64(state)
                words[w, lane] = z
        self._s = words

    def _step(self, nsteps: int) -> np.ndarray:
        """Advance all lanes ``nsteps`` times; returns (nsteps, LANES) u64."""
        s0, s1, s2, s3 = self._s
        out = np.empty((nsteps, LANES), dtype=np.uint64)
        five = np.uint64(5)
        nine = np.uint64(9)
        seventeen = np.uint64(17)
        for i in range(nsteps):
            out[i] = _rotl(s1 * five, 7) * nine
            t = s1 << seventeen
            s2 = s2 ^ s0
            s3 = s3 ^ s1
            s1 = s1 ^ s2
            s0 = s0 ^ s3
            s2 = s2 ^ t
            s3 = _rotl(s3, 45)
        self._s = np.stack([s0, s1, s2, s3])
        return out

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        nsteps = -(-n // LANES)
        return self._step(nsteps).reshape(-1)[:n]

    def random(self, n: int) -> np.ndarray:
        """``n`` float64 uniforms in [0, 1) using the top 53 bits."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def uniform(self, lo: float, hi: float, n: int = 1) -> np.ndarray:
        return lo + (hi - lo) * self.random(n)

    def randint(self, lo: int, hi: int) -> int:
        """One integer in [lo, hi) via floor(u * (hi - lo))."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + int(self.random(1)[0] * (hi - lo))

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """``n`` gaussians via Box-Muller on uniform pairs."""
        m = -(-n // 2)
        u = self.random(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        theta = 2.0 * np.pi * u[m:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return mean + std * z

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        out = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    @property
    def state(self) -> list[int]:
        """Lane words, row-major; round-trips through ``set_state``."""
        return [int(v) for v in self._s.reshape(-1)]

    def set_state(self, words: list[int]) -> None:
        arr = np.array(words, dtype=np.uint64)
        if arr.shape != (4 * LANES,):
            raise ValueError(f"state must hold {4 * LANES} words")
        self._s = arr.reshape(4, LANES).copy()
