"""Deterministic numeric primitives shared by every other module.

The generator is SplitMix64: a 64-bit Weyl sequence (state += GAMMA) passed
through a fixed bit mixer. Because output ``i`` depends only on
``state + (i + 1) * GAMMA``, a block of draws can be produced with vectorised
uint64 arithmetic and still match the scalar definition exactly.

Reference stream for seed 0 (first three ``next_u64`` outputs)::

    0xE220A8397B1DCDAF
    0x6E789E6AA1B965F4
    0x06C45D188009454F

Conventions other ports must follow to reproduce streams bit-for-bit:

* ``uniform``: ``(u64 >> 11) * 2**-53``, in [0, 1).
* ``normal(n)``: draws ``2 * ceil(n / 2)`` uniforms ``(a0, b0, a1, b1, ...)``
  and emits ``r cos(t), r sin(t)`` per pair with ``r = sqrt(-2 ln(1 - a))``,
  ``t = 2 pi b``; a trailing odd value is dropped.
* ``shuffle``: Fisher-Yates from the last index down, ``j = floor(u * (i + 1))``
  using one uniform per swap, drawn as a single block of ``n - 1`` uniforms.
* worker streams: ``Rng(seed ^ worker_index)``.
"""

import math

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Explicit-state SplitMix64 generator. Not thread-safe; use ``spawn``."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int = 1) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(GAMMA)) & _MASK
        return out

    def uniform(self, n: int = 1) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int = 1) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        t = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(t)
        z[:, 1] = r * np.sin(t)
        return z.reshape(-1)[:n]

    def shuffle(self, indices) -> np.ndarray:
        out = np.array(indices, copy=True)
        n = len(out)
        if n < 2:
            return out
        u = self.uniform(n - 1)
        # floor(u * (i + 1)) for i = n-1 .. 1, computed up front
        js = (u * np.arange(n, 1, -1)).astype(np.int64)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = js[step]
            out[i], out[j] = out[j], out[i]
        return out

    def spawn(self, worker_index: int) -> "Rng":
        return Rng(self.state ^ int(worker_index))


def log_sum_exp(values, axis=None):
    """Stable ``log(sum(exp(values)))``; the max is subtracted first."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    s = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)


def sample_standard_normal(rng: Rng) -> float:
    return float(rng.normal(1)[0])


def seeded_shuffle(indices, rng: Rng) -> np.ndarray:
    return rng.shuffle(indices)
