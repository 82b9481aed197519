"""Counter-based deterministic random numbers.

Every stochastic element of the pipeline (synthetic corpora, weight init,
shuffling, dropout masks) draws from this generator so that seeded runs are
bit-reproducible and independent streams can be derived without coordination.

The algorithm is a frozen contract and must never change silently:

* Block i of stream ``key`` is ``mix64(key + (i + 1) * GAMMA) mod 2**64``
  where ``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` is the SplitMix64
  finalizer (Steele et al., "Fast splittable pseudorandom number generators").
* Stream keys derive from a master seed by folding integer stream ids:
  ``key = mix64(seed)`` then ``key = mix64(key ^ mix64(sid * GAMMA + i + 1))``
  for the i-th id ``sid``.
* Uniforms are the top 53 bits: ``u = (block >> 11) * 2**-53``, in [0, 1).
* Normals come from Box-Muller on consecutive uniform pairs, cosine then
  sine branch, with ``log(1 - u1)`` so the argument is never zero.
* Permutations are the argsort (stable) of per-element uint64 draws.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z):
    """SplitMix64 finalizer, elementwise on uint64 scalars or arrays.

    All arithmetic is intentionally modulo 2**64.
    """
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


class RngStream:
    """One deterministic stream, identified by (seed, *stream_ids)."""

    def __init__(self, seed: int, *stream_ids: int):
        key = mix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF))
        with np.errstate(over="ignore"):
            for i, sid in enumerate(stream_ids):
                sid64 = np.uint64(int(sid) & 0xFFFFFFFFFFFFFFFF)
                key = mix64(key ^ mix64(sid64 * GAMMA + np.uint64(i + 1)))
        self._key = np.uint64(key)
        self._counter = 0

    @property
    def key(self) -> int:
        return int(self._key)

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit blocks."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return mix64(self._key + idx * GAMMA)

    def uniform(self, size=()) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, size=()) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform((2, pairs))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64(n), kind="stable")

    def integers(self, low: int, high: int, size=()) -> np.ndarray:
        """Uniform ints in [low, high) by 53-bit rejection-free scaling."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        vals = low + np.minimum((self.uniform(n) * span).astype(np.int64), span - 1)
        return vals.reshape(shape) if shape else int(vals[0])
