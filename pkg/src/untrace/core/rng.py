"""Deterministic randomness.

A single master seed drives every run. Sub-streams are derived by hashing
(seed, label), never by drawing from the parent stream, so disabling one
consumer does not shift any other consumer's randomness and per-step
streams can be re-derived when resuming from a checkpoint.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, label: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK64).to_bytes(8, "little"))
    h.update(b"/")
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Seeded random stream. Same seed + same call sequence => identical outputs."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, label: str) -> "Rng":
        """Independent stream derived from (seed, label); pure, repeatable."""
        return Rng(derive_seed(self.seed, label))

    def torch_generator(self) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(derive_seed(self.seed, "torch") & ((1 << 63) - 1))
        return g

    # thin delegation; high end exclusive, numpy convention
    def random(self):
        return float(self._gen.random())

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_index(self, n: int) -> int:
        """Uniform index into a sequence of length n."""
        return int(self._gen.integers(n))

    def pick(self, seq):
        """Uniform element of a python sequence (kept out of numpy dtypes)."""
        return seq[self.choice_index(len(seq))]

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), order randomized."""
        if k > n:
            raise ValueError(f"cannot sample {k} from {n}")
        return self._gen.permutation(n)[:k]
