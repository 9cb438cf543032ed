"""Seedable random stream shared by every stochastic operation."""

from __future__ import annotations

import numpy as np

__all__ = ["RandomnessSource", "as_source"]

_TINY = np.nextafter(0.0, 1.0)


class RandomnessSource:
    """Deterministic stream of random numbers backed by PCG64.

    Children derived with :meth:`spawn` depend only on the parent seed and the
    coordinates passed in, never on how much of the parent stream was consumed.
    """

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self):
        return f"RandomnessSource(seed={self.seed})"

    def spawn(self, *coords) -> "RandomnessSource":
        """Independent child stream keyed by ``coords`` (ints, floats or strings)."""
        words = [self.seed & 0xFFFFFFFF, self.seed >> 32]
        for c in coords:
            if isinstance(c, (float, np.floating)):
                c = repr(float(c))
            if isinstance(c, str):
                words.extend(c.encode("utf-8"))
                words.append(0x1F)
            else:
                c = int(c)
                words.extend([c & 0xFFFFFFFF, (c >> 32) & 0xFFFFFFFF])
        state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
        return RandomnessSource(int(state[0]) | (int(state[1]) << 32))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform reals on the open interval (0, 1)."""
        u = self._gen.random(size)
        return np.maximum(u, _TINY)

    def uniform_centered(self, size=None) -> np.ndarray:
        """Uniform reals on the open interval (-1/2, 1/2)."""
        return self.uniform(size) - 0.5

    def laplace(self, scale: float, size=None) -> np.ndarray:
        """Laplace(0, scale) by inverse CDF of a single centred uniform."""
        u = self.uniform_centered(size)
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def normal(self, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def as_source(rng) -> RandomnessSource:
    """Accept a RandomnessSource or an integer seed."""
    if isinstance(rng, RandomnessSource):
        return rng
    if rng is None:
        return RandomnessSource(0)
    return RandomnessSource(int(rng))
