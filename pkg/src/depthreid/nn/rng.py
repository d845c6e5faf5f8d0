"""Deterministic random streams.

All stochastic pieces of the library (weight init, dropout masks, attention
samples, batch shuffling, the synthetic generator) draw from an RngStream.
The same seed and the same call sequence reproduce the same values, so a
training run is a pure function of its config and seed.
"""

import zlib

import numpy as np


class RngStream:
    """Seeded random source backed by numpy's PCG64.

    ``child(tag)`` derives an independent stream from the parent seed and a
    string tag, so sub-components can consume randomness in any order
    without perturbing one another.
    """

    algorithm = "pcg64"

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, tag):
        """Derive a reproducible, independent stream named by ``tag``."""
        key = zlib.crc32(tag.encode("utf-8"))
        return RngStream(self.seed, self._spawn_key + (key,))

    def normal(self, shape=(), std=1.0, mean=0.0):
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape=(), low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high, shape=()):
        return self._gen.integers(low, high, size=shape)

    def bernoulli(self, p):
        """Sample 0/1 floats with per-element success probability ``p``."""
        p = np.asarray(p, dtype=np.float64)
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("bernoulli: probabilities must lie in [0, 1]")
        return (self._gen.random(p.shape) < p).astype(np.float64)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self._spawn_key})"
