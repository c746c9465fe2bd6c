"""Seed derivation and stream independence.

The reproducibility story rests on two properties: the same seed replays
the same stream, and child streams depend only on (seed, label), never on
draw order. Both are checked directly here.
"""

import hashlib

import numpy as np
import pytest

from untrace.core.rng import Rng, derive_seed


class TestDeriveSeed:
    def test_matches_blake2b_by_hand(self):
        # independent recomputation of the derivation recipe
        h = hashlib.blake2b(digest_size=8)
        h.update((1234).to_bytes(8, "little"))
        h.update(b"/")
        h.update(b"train")
        want = int.from_bytes(h.digest(), "little")
        assert derive_seed(1234, "train") == want

    def test_label_sensitivity(self):
        seeds = {derive_seed(7, lb) for lb in ("a", "b", "a/", "/a", "aa")}
        assert len(seeds) == 5

    def test_seed_sensitivity(self):
        assert derive_seed(1, "x") != derive_seed(2, "x")

    def test_fits_in_64_bits(self):
        s = derive_seed(2**64 - 1, "edge")
        assert 0 <= s < 2**64


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(99).uniform(size=100)
        b = Rng(99).uniform(size=100)
        np.testing.assert_array_equal(a, b)

    def test_child_is_pure(self):
        r = Rng(5)
        first = r.child("sub").uniform(size=10)
        r.uniform(size=1000)  # drain the parent
        second = r.child("sub").uniform(size=10)
        np.testing.assert_array_equal(first, second)

    def test_children_do_not_shift_each_other(self):
        # disabling one consumer must not move another consumer's stream
        r1 = Rng(5)
        r1.child("noise").uniform(size=50)
        a = r1.child("blur").uniform(size=50)
        r2 = Rng(5)
        b = r2.child("blur").uniform(size=50)
        np.testing.assert_array_equal(a, b)

    def test_child_chain_distinct(self):
        r = Rng(5)
        vals = {
            r.child("a").child("b").seed,
            r.child("a/b").seed,
            r.child("ab").seed,
        }
        assert len(vals) == 3

    def test_seed_range_validation(self):
        with pytest.raises(ValueError):
            Rng(-1)
        with pytest.raises(ValueError):
            Rng(2**64)
        Rng(0)
        Rng(2**64 - 1)

    def test_uniform_bounds(self):
        v = Rng(3).uniform(2.0, 5.0, size=1000)
        assert v.min() >= 2.0 and v.max() < 5.0

    def test_permutation_is_permutation(self):
        p = Rng(3).permutation(32)
        assert sorted(p.tolist()) == list(range(32))

    def test_pick_returns_python_object(self):
        got = Rng(3).pick(["x", "y", "z"])
        assert isinstance(got, str)

    def test_sample_indices_distinct(self):
        idx = Rng(3).sample_indices(20, 7)
        assert len(idx) == 7
        assert len(set(idx.tolist())) == 7

    def test_sample_indices_too_many(self):
        with pytest.raises(ValueError):
            Rng(3).sample_indices(5, 6)

    def test_torch_generator_deterministic(self):
        import torch

        g1 = Rng(11).torch_generator()
        g2 = Rng(11).torch_generator()
        t1 = torch.rand(16, generator=g1)
        t2 = torch.rand(16, generator=g2)
        assert torch.equal(t1, t2)
