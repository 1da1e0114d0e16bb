"""SplitMix64 generator and seed derivation.

Every seeded choice that must be bit-exact across platforms (tie breaks,
component seeds) goes through this module.  Bulk sampling uses numpy's
PCG64 seeded from values derived here.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master, *keys):
    """Hash a master seed and a path of integer keys into a 64-bit seed.

    ``h = mix64(master)``, then for each key ``h = mix64(h ^ mix64(key + GOLDEN))``.
    """
    h = mix64(int(master))
    for k in keys:
        h = mix64(h ^ mix64((int(k) + GOLDEN) & MASK64))
    return h


def component_seed(master, index):
    """Seed for ensemble component ``index``.

    Component 0 reuses the master seed so that a one-component ensemble is
    exactly its base scorer.
    """
    return int(master) if index == 0 else derive_seed(master, index)


def numpy_rng(seed):
    return np.random.default_rng(int(seed) & MASK64)


class SplitMix64:
    """Minimal 64-bit SplitMix generator with a call counter."""

    def __init__(self, seed):
        self.state = int(seed) & MASK64
        self.calls = 0

    def next64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def randbelow(self, n):
        if n <= 0:
            raise ValueError("n must be positive")
        self.calls += 1
        # rejection sampling keeps the draw exactly uniform
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next64()
            if r < limit:
                return r % n

    def choice(self, items):
        items = list(items)
        return items[self.randbelow(len(items))]
