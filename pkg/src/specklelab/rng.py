"""Deterministic random number generation for reproducible experiments.

Every random quantity in this package is derived from a single documented
generator so that a seed fully determines datasets, network initialization,
training trajectories and metric reports.

Algorithm (fixed for this repository)
-------------------------------------
The core generator is **splitmix64** (Steele, Lea & Vigna): 64-bit state,
one step per draw::

    state = (state + 0x9E3779B97F4A7C15) mod 2**64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    output = z ^ (z >> 31)

Derived quantities:

* uniform double in (0, 1]:  ``u = ((output >> 11) + 1) * 2**-53``
* standard normal: Box-Muller, cosine branch, two uniforms per draw:
  ``sqrt(-2 ln u1) * cos(2 pi u2)``
* unit-mean Gamma(shape L, rate L) for L >= 1: the Marsaglia-Tsang
  squeeze/rejection method on ``d = L - 1/3``, ``c = 1/sqrt(9 d)``; each
  attempt consumes one normal (two uniforms) and, when ``(1 + c x)^3 > 0``,
  one further uniform for the acceptance test; accepted values are
  ``d (1 + c x)^3 / L``.
* integer below n: rejection on the top ``(2**64 // n) * n`` values of the
  raw stream, then modulo (unbiased).

Substreams
----------
Independent substreams are derived, not split from the sequential stream, so
work can be distributed without replaying consumption:

    child_seed(parent_seed, key) =
        mix64((parent_seed + (key + 1) * 0x9E3779B97F4A7C15) mod 2**64)

where ``mix64`` is the output scrambler above (without the state increment).
Speckle fields use one substream per pixel, keyed by a single draw from the
caller's stream plus the flat pixel index; see ``specklelab.speckle``.

Reproducibility guarantees
--------------------------
The integer stream and the uniform mapping are exact on every platform.
Normal and Gamma draws involve ``log``/``cos``/``sqrt`` and are bitwise
stable on a given platform and backend; across backends (numba vs numpy) or
math libraries they may differ in the last ulp (observed <= 1 ulp relative).
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX_A = 0xBF58476D1CE4E5B9
MIX_B = 0x94D049BB133111EB
TWO_NEG53 = 2.0 ** -53
TWO_PI = 6.283185307179586


def mix64(z: int) -> int:
    """Splitmix64 output scrambler on a 64-bit value (no state increment)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * MIX_B) & _MASK
    return z ^ (z >> 31)


def substream_state(key: int, index: int) -> int:
    """Starting state of the substream for `index` under field key `key`."""
    return mix64((key + (index + 1) * GOLDEN) & _MASK)


def mix64_vec(z: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 scrambler on a uint64 array."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_B)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Sequential splitmix64 stream with derived substreams.

    Same seed gives the same stream everywhere; see the module docstring for
    the exact guarantees.
    """

    __slots__ = ("seed", "_state")

    def __init__(self, seed: int):
        if not 0 <= seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self._state = seed

    def u64(self) -> int:
        """Next raw 64-bit output."""
        self._state = (self._state + GOLDEN) & _MASK
        return mix64(self._state)

    def uniform(self) -> float:
        """Uniform double in (0, 1]."""
        return ((self.u64() >> 11) + 1) * TWO_NEG53

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            u = self.u64()
            if u < limit:
                return u % n

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, cosine branch)."""
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)

    def normals(self, n: int) -> np.ndarray:
        """n standard normal draws, vectorized.

        Advances the stream exactly like n ``normal()`` calls; values may
        differ from the scalar path in the last ulp (vectorized libm).
        """
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return np.empty(0)
        idx = np.arange(1, 2 * n + 1, dtype=np.uint64)
        z = mix64_vec(np.uint64(self._state) + idx * np.uint64(GOLDEN))
        self._state = (self._state + 2 * n * GOLDEN) & _MASK
        u = ((z >> np.uint64(11)).astype(np.float64) + 1.0) * TWO_NEG53
        return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(TWO_PI * u[1::2])

    def gamma_unit(self, shape: float) -> float:
        """One draw from the unit-mean Gamma law (shape L, rate L), L >= 1.

        Scalar reference implementation of the Marsaglia-Tsang scheme; the
        bulk samplers in the kernel backends follow the identical algorithm.
        """
        if shape < 1.0:
            raise ValueError("shape must be >= 1")
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            t = 1.0 + c * x
            if t <= 0.0:
                continue
            v = t * t * t
            u = self.uniform()
            x2 = x * x
            if u < 1.0 - 0.0331 * x2 * x2:
                return d * v / shape
            if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
                return d * v / shape

    def spawn(self, key: int) -> "Rng":
        """Independent child stream for `key` (documented derivation rule)."""
        return Rng(substream_state(self.seed, key))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
