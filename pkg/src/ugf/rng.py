"""Seeded random streams with a platform-stable bit source.

Uniforms are built from the raw 64-bit PCG64 output (stable across numpy
releases and platforms); Gaussians come from Box-Muller on top of that, so
no numpy distribution-method implementation details leak into results.
"""

from __future__ import annotations

import numpy as np

_TWO_POW_M53 = 2.0 ** -53


class RngStream:
    """Deterministic stream of uniforms and standard normals.

    ``counter`` is the number of 64-bit words consumed so far.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.PCG64(np.random.SeedSequence(self.seed))
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        out = self._bitgen.random_raw(n)
        self.counter += n
        return np.asarray(out, dtype=np.uint64)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform draws on [0, 1) with 53 bits of resolution."""
        n = int(np.prod(shape, dtype=np.int64))
        raw = self._raw(n)
        return ((raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53).reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via Box-Muller (both outputs of each pair used)."""
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform((m,))  # (0, 1], keeps log finite
        u2 = self.uniform((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def integers(self, high: int, shape=()) -> np.ndarray:
        """Integers in [0, high) by scaling uniforms (bias < 2**-40 for small high)."""
        return np.floor(self.uniform(shape) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform((n,)), kind="stable")

    def spawn(self, key: int) -> "RngStream":
        """Independent child stream; depends only on (seed, key)."""
        ss = np.random.SeedSequence([self.seed, int(key) & 0xFFFFFFFF])
        return RngStream(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"
