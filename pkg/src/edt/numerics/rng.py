"""Seeded randomness with serializable state.

Built on PCG64: the same seed yields the same draw sequence across runs and
platforms at equal precision, the generator state round-trips through JSON
(for bit-exact training resume), and independent child streams are derived
with spawn keys so per-item seeds never collide with the parent stream.
"""

import numpy as np


class Rng:
    """A seeded PCG64 stream."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index):
        """Independent child stream, deterministic per (seed, index)."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(index),))
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(seq))
        return child

    # draws -------------------------------------------------------------

    def normal(self, shape=(), dtype=np.float64):
        return self._gen.standard_normal(size=shape, dtype=np.dtype(dtype))

    def uniform(self, low=0.0, high=1.0, shape=()):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high, shape=()):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)

    # state -------------------------------------------------------------

    def get_state(self):
        """JSON-serializable snapshot (python ints carry the 128-bit state)."""
        return {"seed": self.seed, "state": self._gen.bit_generator.state}

    def set_state(self, snapshot):
        self.seed = int(snapshot["seed"])
        self._gen.bit_generator.state = snapshot["state"]

    @classmethod
    def from_state(cls, snapshot):
        rng = cls(snapshot["seed"])
        rng.set_state(snapshot)
        return rng
