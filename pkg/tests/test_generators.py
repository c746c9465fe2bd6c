"""Procedural real images and the fixed generator surrogates.

The surrogates must (a) leave a measurable periodic fingerprint at their
declared spectral peaks, absent from the real images, and (b) keep every
pixel inside a fixed tone range so additive perturbations never clip.
"""

import numpy as np
import pytest

from untrace.bench.generators import (
    DEFAULT_TINYGMS,
    TinyGM,
    apply_gm,
    generate_corpus,
    synthesize_real_corpus,
    synthesize_real_image,
)
from untrace.core.dataset import Dataset, DatasetItem
from untrace.core.images import save_image, validate_image
from untrace.core.rng import Rng
from untrace.errors import ContractError


def _avg_spectrum_db(images) -> np.ndarray:
    mags = [np.abs(np.fft.fft2(img.mean(axis=0))) for img in images]
    return np.log(np.mean(mags, axis=0) + 1e-8)


def _peak_prominence(spec: np.ndarray, fy: float, fx: float) -> float:
    # peak minus the median of a surrounding ring, so a peak on a loud
    # background does not score higher than one on a quiet background
    h, w = spec.shape
    cy = int(round(fy * h)) % h
    cx = int(round(fx * w)) % w
    ys = (np.arange(cy - 4, cy + 5) % h)[:, None]
    xs = (np.arange(cx - 4, cx + 5) % w)[None, :]
    block = spec[ys, xs]
    ring = np.concatenate([block[:3].ravel(), block[6:].ravel(),
                           block[3:6, :3].ravel(), block[3:6, 6:].ravel()])
    return float(spec[cy, cx] - np.median(ring))


class TestRealImages:
    def test_valid_and_deterministic(self):
        a = synthesize_real_image(Rng(1), 64)
        b = synthesize_real_image(Rng(1), 64)
        validate_image(a)
        np.testing.assert_array_equal(a, b)

    def test_distinct_across_streams(self):
        a = synthesize_real_image(Rng(1).child("x"), 64)
        b = synthesize_real_image(Rng(1).child("y"), 64)
        assert np.abs(a - b).mean() > 0.01

    def test_corpus_shape(self):
        c = synthesize_real_corpus(5, 32, Rng(2))
        assert c.shape == (5, 3, 32, 32)

    def test_corpus_size_validated(self):
        with pytest.raises(ContractError):
            synthesize_real_corpus(0, 32, Rng(3))


class TestTinyGM:
    def test_identity_config_passthrough(self):
        gm = TinyGM(id="noop")
        x = synthesize_real_image(Rng(4), 32)
        np.testing.assert_array_equal(gm.apply(x), x)

    def test_tone_squeeze_bounds(self):
        # extreme input must land strictly inside [lo, hi]
        gm = TinyGM(id="sq", range_lo=0.04, range_hi=0.96)
        x = np.zeros((3, 16, 16), dtype=np.float32)
        x[:, :, 8:] = 1.0
        out = gm.apply(x)
        assert out.min() == pytest.approx(0.04, abs=1e-6)
        assert out.max() == pytest.approx(0.96, abs=1e-6)

    def test_default_gms_respect_tone_margin(self):
        x = synthesize_real_image(Rng(5), 64)
        for gm in DEFAULT_TINYGMS:
            out = gm.apply(x)
            assert out.min() >= 0.04 - 1e-6, gm.id
            assert out.max() <= 0.96 + 1e-6, gm.id

    def test_divisibility_enforced(self):
        gm = next(g for g in DEFAULT_TINYGMS if g.scale_factor == 4)
        bad = np.zeros((3, 36, 36), dtype=np.float32)  # 36 % 4 == 0 is fine
        gm.apply(bad)
        worse = np.zeros((3, 36, 20), dtype=np.float32)
        gm.apply(worse)  # both sides divisible by 4
        odd = TinyGM(id="x3", scale_factor=3)
        with pytest.raises(ContractError):
            odd.apply(np.zeros((3, 32, 32), dtype=np.float32))

    def test_deterministic(self):
        x = synthesize_real_image(Rng(6), 64)
        for gm in DEFAULT_TINYGMS:
            np.testing.assert_array_equal(gm.apply(x), gm.apply(x))

    @pytest.mark.parametrize("gm", DEFAULT_TINYGMS, ids=lambda g: g.id)
    def test_fingerprint_peaks_rise_above_real(self, gm):
        # in the corpus-averaged spectrum, each declared harmonic must be
        # more prominent over its local background in the generated images
        # than in the real ones; single-image spectra are too noisy to
        # resolve fingerprints of a couple gray levels
        root = Rng(7)
        n = 12
        reals = [synthesize_real_image(root.child(f"r{i}"), 128)
                 for i in range(n)]
        fakes = [gm.apply(x) for x in reals]
        spec_r = _avg_spectrum_db(reals)
        spec_f = _avg_spectrum_db(fakes)
        for fy, fx in gm.harmonics:
            pr = _peak_prominence(spec_r, fy, fx)
            pf = _peak_prominence(spec_f, fy, fx)
            assert pf > pr + 0.5, (gm.id, fy, fx, pr, pf)

    def test_apply_gm_stacks(self):
        xs = synthesize_real_corpus(3, 32, Rng(8))
        gm = DEFAULT_TINYGMS[0]
        got = apply_gm(gm, xs)
        want = np.stack([gm.apply(x) for x in xs])
        np.testing.assert_array_equal(got, want)


class TestGenerateCorpus:
    def _real_dataset(self, tmp_path, n=6, side=32):
        items = []
        root = Rng(9)
        for i in range(n):
            p = tmp_path / "real" / f"{i:03d}.png"
            save_image(synthesize_real_image(root.child(f"i{i}"), side), p)
            items.append(DatasetItem(path=p, label="REAL", source="synthetic"))
        return Dataset(items=tuple(items))

    def test_writes_labeled_corpus(self, tmp_path):
        real = self._real_dataset(tmp_path)
        gm = DEFAULT_TINYGMS[0]
        ds = generate_corpus(gm, real, 4, Rng(10), tmp_path / "out")
        assert len(ds.items) == 4
        assert all(it.label == gm.id for it in ds.items)
        assert all(it.path.exists() for it in ds.items)
        assert gm.id in ds.label_set and "REAL" in ds.label_set

    def test_reproducible_bytes(self, tmp_path):
        real = self._real_dataset(tmp_path)
        gm = DEFAULT_TINYGMS[2]
        a = generate_corpus(gm, real, 3, Rng(11), tmp_path / "a")
        b = generate_corpus(gm, real, 3, Rng(11), tmp_path / "b")
        for ia, ib in zip(a.items, b.items):
            assert ia.path.read_bytes() == ib.path.read_bytes()

    def test_rejects_oversized_draw(self, tmp_path):
        real = self._real_dataset(tmp_path, n=2)
        with pytest.raises(ContractError):
            generate_corpus(DEFAULT_TINYGMS[0], real, 5, Rng(12),
                            tmp_path / "out")
