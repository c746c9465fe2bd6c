"""Procedural image sources for the bench.

`synthesize_real_corpus` builds "real" photographs analytically (spectral
noise, soft shapes, gradients) with no resampling anywhere, so the real
class carries no interpolation fingerprint. TinyGMs then imprint known,
class-consistent artifacts on real images: a resampling pass, a fixed
convolution kernel, and an optional periodic multiplicative grid. Each
TinyGM declares the fractional frequency coordinates where its artifact
concentrates, which the spectrum diagnostics use as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ..core.dataset import Dataset, DatasetItem
from ..core.images import Image, clip01, from_hwc, save_image, to_hwc
from ..core.rng import Rng
from ..datasynth import resize_image
from ..errors import ContractError


def _identity_kernel() -> np.ndarray:
    k = np.zeros((3, 3), dtype=np.float32)
    k[1, 1] = 1.0
    return k


# mild unsharp mask: identity plus a tenth of a 4-neighbor laplacian;
# stronger boosts raise the broadband spectral floor, which buries the
# grid harmonics and inflates the smoothing cost of fingerprint removal
_SHARPEN = np.array(
    [[0.0, -0.1, 0.0],
     [-0.1, 1.4, -0.1],
     [0.0, -0.1, 0.0]], dtype=np.float32)

# identity plus a scaled 8-neighbor high-pass response
_HIGH_PASS_BOOST = (
    _identity_kernel()
    + 0.22 * np.array(
        [[-1.0, -1.0, -1.0],
         [-1.0, 8.0, -1.0],
         [-1.0, -1.0, -1.0]], dtype=np.float32) / 8.0
)


@dataclass(frozen=True)
class TinyGM:
    """A fixed generator surrogate: resample, convolve, imprint a grid.

    scale_factor 1 skips resampling; kernel None skips the convolution;
    grid_amplitude 0 skips the periodic imprint. `harmonics` lists
    (fy, fx) fractional frequencies (cycles per pixel) where the
    fingerprint peaks, used by the spectrum diagnostics.
    """

    id: str
    scale_factor: int = 1
    mode: str = "nearest"
    kernel: np.ndarray | None = None
    grid_period: int = 0
    grid_amplitude: float = 0.0
    # fixed output tone range; the default squeeze keeps generated pixels
    # an epsilon-ball away from 0 and 1 (a class-consistent trait, like a
    # squashing output nonlinearity)
    range_lo: float = 0.0
    range_hi: float = 1.0
    harmonics: tuple[tuple[float, float], ...] = ()

    def apply(self, x: Image) -> Image:
        out = x
        if self.scale_factor > 1:
            _, h, w = x.shape
            f = self.scale_factor
            if h % f or w % f:
                raise ContractError(
                    f"{self.id}: dims {h}x{w} not divisible by {f}"
                )
            small = resize_image(out, h // f, w // f, "bilinear")
            out = resize_image(small, h, w, self.mode)
        if self.kernel is not None:
            hwc = to_hwc(out)
            conv = cv2.filter2D(hwc, -1, self.kernel,
                                borderType=cv2.BORDER_REFLECT_101)
            out = clip01(from_hwc(conv))
        if self.grid_amplitude > 0.0 and self.grid_period > 0:
            _, h, w = out.shape
            yy = np.arange(h, dtype=np.float32)
            xx = np.arange(w, dtype=np.float32)
            g = 0.5 * (
                np.cos(2.0 * np.pi * yy / self.grid_period)[:, None]
                + np.cos(2.0 * np.pi * xx / self.grid_period)[None, :]
            )
            out = clip01(out * (1.0 + self.grid_amplitude * g)[None, :, :])
        if self.range_lo > 0.0 or self.range_hi < 1.0:
            out = self.range_lo + (self.range_hi - self.range_lo) * clip01(out)
        return np.ascontiguousarray(out, dtype=np.float32)


# keeps every generated pixel at least 0.04 away from the [0, 1] bounds,
# comfortably above the 8/255 additive-attack budget, so clamping never
# distorts an additive perturbation applied to a generated image
_TONE_LO = 0.04
_TONE_HI = 0.96

# every surrogate carries an explicit multiplicative grid at its own
# period: the resampling pass alone leaves transfer-function nulls (not
# peaks) at the band edges, so the grid is what guarantees an honest
# spectral peak at each declared harmonic. Amplitudes are around two
# gray levels: loud enough for the classifiers and the log-spectrum
# diagnostics, quiet enough that the fingerprint itself is a minor term
# in structural similarity, as with production generators.
DEFAULT_TINYGMS: tuple[TinyGM, ...] = (
    TinyGM(
        id="gm_near2",
        scale_factor=2,
        mode="nearest",
        kernel=_SHARPEN,
        grid_period=2,
        grid_amplitude=0.015,
        range_lo=_TONE_LO,
        range_hi=_TONE_HI,
        harmonics=((0.5, 0.0), (0.0, 0.5)),
    ),
    TinyGM(
        id="gm_bilin4",
        scale_factor=4,
        mode="bilinear",
        kernel=_HIGH_PASS_BOOST,
        grid_period=4,
        grid_amplitude=0.015,
        range_lo=_TONE_LO,
        range_hi=_TONE_HI,
        harmonics=((0.25, 0.0), (0.0, 0.25)),
    ),
    TinyGM(
        id="gm_grid8",
        scale_factor=2,
        mode="bicubic",
        grid_period=8,
        grid_amplitude=0.02,
        range_lo=_TONE_LO,
        range_hi=_TONE_HI,
        harmonics=((0.125, 0.0), (0.0, 0.125)),
    ),
)


def _fractal_field(r: Rng, h: int, w: int, alpha: float) -> np.ndarray:
    """Zero-mean unit-std noise field with a 1/f^alpha spectrum."""
    white = r.normal(0.0, 1.0, size=(h, w))
    f = np.fft.fft2(white)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fy * fy + fx * fx)
    amp = 1.0 / (radius ** alpha + (1.0 / max(h, w)))
    field = np.fft.ifft2(f * amp).real
    field -= field.mean()
    std = field.std()
    return field / (std if std > 1e-9 else 1.0)


def _soft_shape(r: Rng, h: int, w: int) -> tuple[np.ndarray, np.ndarray, float]:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = r.uniform(0.1, 0.9) * h, r.uniform(0.1, 0.9) * w
    ry = r.uniform(0.08, 0.4) * h
    rx = r.uniform(0.08, 0.4) * w
    theta = r.uniform(0.0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    u = ((xx - cx) * ct + (yy - cy) * st) / rx
    v = (-(xx - cx) * st + (yy - cy) * ct) / ry
    if r.random() < 0.5:
        d = u * u + v * v
    else:
        d = np.maximum(np.abs(u), np.abs(v)) ** 2
    softness = r.uniform(0.02, 0.1)
    z = np.clip((d - 1.0) / softness, -60.0, 60.0)
    mask = 1.0 / (1.0 + np.exp(z))
    color = np.array([r.uniform(0.1, 0.9) for _ in range(3)])
    opacity = r.uniform(0.5, 1.0)
    return mask, color, opacity


def synthesize_real_image(r: Rng, resolution: int) -> Image:
    """One procedural photograph-like image, built without any resampling.

    The content is piecewise flat by design: overlapping near-constant
    shapes with steep soft edges over a faint fractal background. Local
    differences are either near zero (flat interiors) or well above the
    smoothing color radius (shape edges), so a bandwidth-limited smoother
    preserves the image; shallow mid-amplitude texture would sit inside
    the smoother's color window and be measured as attack damage that no
    attack model could avoid.
    """
    h = w = resolution
    alpha = r.uniform(2.0, 3.0)
    structure = _fractal_field(r, h, w, alpha)
    img = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        base = r.uniform(0.30, 0.70)
        contrast = r.uniform(0.01, 0.02)
        img[c] = base + contrast * structure
    n_shapes = int(r.integers(6, 13))
    for _ in range(n_shapes):
        mask, color, opacity = _soft_shape(r, h, w)
        blend = opacity * mask
        img = img * (1.0 - blend)[None] + color[:, None, None] * blend[None]
    theta = r.uniform(0.0, 2.0 * np.pi)
    strength = r.uniform(0.04, 0.18)
    yy = np.linspace(-0.5, 0.5, h)[:, None]
    xx = np.linspace(-0.5, 0.5, w)[None, :]
    img += strength * (np.cos(theta) * xx + np.sin(theta) * yy)[None]
    lo = img.min()
    hi = img.max()
    span = hi - lo if hi > lo else 1.0
    out_lo = r.uniform(0.0, 0.08)
    out_hi = r.uniform(0.92, 1.0)
    img = out_lo + (img - lo) / span * (out_hi - out_lo)
    return np.ascontiguousarray(img, dtype=np.float32)


def synthesize_real_corpus(n: int, resolution: int, rng: Rng) -> np.ndarray:
    """Stack of n procedural real images, (n, 3, R, R)."""
    if n < 1:
        raise ContractError("corpus size must be >= 1")
    return np.stack([
        synthesize_real_image(rng.child(f"img{i:06d}"), resolution)
        for i in range(n)
    ])


def apply_gm(gm: TinyGM, images: np.ndarray) -> np.ndarray:
    """Apply one TinyGM to a stack of images."""
    return np.stack([gm.apply(img) for img in images])


def generate_corpus(gm: TinyGM, real: Dataset, n: int, rng: Rng,
                    out_dir) -> Dataset:
    """Imprint gm on n images drawn from `real`, written under out_dir.

    The draw is a without-replacement sample; the same seed reproduces
    the same corpus bit-for-bit.
    """
    if len(real.items) < n:
        raise ContractError(
            f"need {n} real images, dataset has {len(real.items)}"
        )
    out_dir = Path(out_dir)
    idx = rng.sample_indices(len(real.items), n)
    items = []
    for j, i in enumerate(idx):
        img = real.load(int(i))
        fake = gm.apply(img)
        path = out_dir / gm.id / f"{j:06d}.png"
        save_image(fake, path)
        items.append(DatasetItem(path=path, label=gm.id, source=gm.id))
    labels = set(real.label_set) | {gm.id}
    return Dataset(items=tuple(items), label_set=tuple(sorted(labels)))
