"""Quantitative diagnostics: average frequency spectra, residual
statistics, and image-fidelity metrics.

The average spectrum characterizes a corpus: channel-mean each image to
grayscale, take the 2-D DFT, log-magnitude, then average the maps. The
residual statistics separate attack families: a shared additive
perturbation makes all residuals identical (pairwise distance zero) and
uncorrelated with content, while a multiplicative attack's residual
scales with the image itself (|PCC| pushed toward 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .core.dataset import Dataset
from .core.images import Image
from .errors import ContractError, UndefinedCorrelationError
from .features import FeatureExtractor

SPECTRUM_EPS = 1e-8

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_stack(images) -> np.ndarray:
    if isinstance(images, Dataset):
        return images.load_all()
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ContractError(f"expected (N,3,H,W) or Dataset, got {arr.shape}")
    return arr


def grayscale_log_spectrum(x: Image, eps: float = SPECTRUM_EPS) -> np.ndarray:
    """log(|DFT| + eps) of the channel-mean image; DC at index [0, 0]."""
    gray = np.asarray(x, dtype=np.float64).mean(axis=0)
    mag = np.abs(np.fft.fft2(gray))
    return np.log(mag + eps)


def average_spectrum(images, eps: float = SPECTRUM_EPS) -> np.ndarray:
    """Mean over the corpus of per-image grayscale log-spectra."""
    stack = _as_stack(images)
    if stack.shape[0] < 1:
        raise ContractError("empty corpus")
    acc = np.zeros(stack.shape[-2:], dtype=np.float64)
    for img in stack:
        acc += grayscale_log_spectrum(img, eps)
    return acc / stack.shape[0]


def spectrum_l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference between two spectrum maps."""
    if a.shape != b.shape:
        raise ContractError(f"spectrum shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def save_spectrum_heatmap(spec: np.ndarray, path) -> None:
    """Write a viewing copy: center-shifted and min-max scaled to 8 bits.

    The raw matrix convention (DC at [0,0]) is unchanged; only the PNG is
    shifted for display.
    """
    shifted = np.fft.fftshift(spec)
    lo, hi = shifted.min(), shifted.max()
    span = hi - lo if hi > lo else 1.0
    u8 = np.rint((shifted - lo) / span * 255.0).astype(np.uint8)
    from pathlib import Path
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(u8, mode="L").save(path)


def harmonic_peak_prominence(spec: np.ndarray,
                             coord: tuple[float, float],
                             window: int = 3,
                             exclude: int = 1) -> float:
    """Peak height above local background at a fractional frequency.

    coord is (fy, fx) in cycles per pixel; the background is the median
    of a surrounding window with a small exclusion zone around the peak.
    """
    h, w = spec.shape
    iy = int(round(coord[0] * h)) % h
    ix = int(round(coord[1] * w)) % w
    peak = spec[iy, ix]
    ys = [(iy + dy) % h for dy in range(-window, window + 1)]
    xs = [(ix + dx) % w for dx in range(-window, window + 1)]
    ring = [
        spec[y, x]
        for dy, y in zip(range(-window, window + 1), ys)
        for dx, x in zip(range(-window, window + 1), xs)
        if max(abs(dy), abs(dx)) > exclude
    ]
    return float(peak - np.median(ring))


def pairwise_residual_l2(residuals) -> np.ndarray:
    """L2 distance for every unordered pair, (i<j) lexicographic order."""
    arr = np.asarray(residuals, dtype=np.float64)
    n = arr.shape[0]
    if n < 2:
        raise ContractError("need at least 2 residuals for pairwise distances")
    flat = arr.reshape(n, -1)
    out = []
    for i in range(n):
        diff = flat[i + 1:] - flat[i]
        out.append(np.sqrt((diff * diff).sum(axis=1)))
    return np.concatenate(out)


def pcc(delta, x) -> float:
    """Pearson correlation of the flattened vectors."""
    d = np.asarray(delta, dtype=np.float64).reshape(-1)
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if d.shape != v.shape:
        raise ContractError("residual and image sizes differ")
    ds = d - d.mean()
    vs = v - v.mean()
    denom = np.sqrt((ds * ds).sum()) * np.sqrt((vs * vs).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError(
            "zero variance makes the correlation undefined"
        )
    return float(np.clip((ds * vs).sum() / denom, -1.0, 1.0))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _sep_filter(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    pad = len(k) // 2
    padded = np.pad(img, pad, mode="reflect")
    tmp = np.apply_along_axis(np.convolve, 0, padded, k, mode="valid")
    return np.apply_along_axis(np.convolve, 1, tmp, k, mode="valid")


def ssim(a: Image, b: Image) -> float:
    """Structural similarity with a Gaussian window, channel-averaged.

    11x11 window, sigma 1.5, population (weighted-moment) statistics,
    dynamic range 1; the window-radius border is excluded from the mean.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ContractError("expected (C,H,W) images")
    if min(a.shape[1], a.shape[2]) < SSIM_WINDOW:
        raise ContractError(f"min side {SSIM_WINDOW} required")
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    pad = SSIM_WINDOW // 2
    vals = []
    for c in range(a.shape[0]):
        x, y = a[c], b[c]
        mx = _sep_filter(x, k)
        my = _sep_filter(y, k)
        mxx = _sep_filter(x * x, k)
        myy = _sep_filter(y * y, k)
        mxy = _sep_filter(x * y, k)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2)
        )
        vals.append(s[pad:-pad, pad:-pad].mean())
    return float(np.mean(vals))


def perceptual_distance(a: Image, b: Image, fx: FeatureExtractor) -> float:
    """Feature-space distance over the frozen backbone.

    At each tap the feature maps are unit-normalized along channels; the
    distance is the spatial mean of the squared difference norm, averaged
    over taps. Zero iff the features agree everywhere.
    """
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    fa = fx.features_np(np.asarray(a, dtype=np.float32))
    fb = fx.features_np(np.asarray(b, dtype=np.float32))
    dists = []
    for name in fx.layers:
        na = _unit_channels(fa[name])
        nb = _unit_channels(fb[name])
        d = ((na - nb) ** 2).sum(axis=0)
        dists.append(float(d.mean()))
    return float(np.mean(dists))


def _unit_channels(feat: np.ndarray) -> np.ndarray:
    norm = np.sqrt((feat.astype(np.float64) ** 2).sum(axis=0, keepdims=True))
    return feat / (norm + 1e-10)


@dataclass
class ResidualStats:
    pairwise_l2: np.ndarray
    pcc_values: np.ndarray
    pcc_excluded: int  # images whose correlation was undefined
    n: int

    def summary(self) -> dict:
        pl = self.pairwise_l2
        pv = self.pcc_values
        return {
            "n": self.n,
            "pairwise_l2_mean": float(pl.mean()) if pl.size else None,
            "pairwise_l2_variance": float(pl.var()) if pl.size else None,
            "pairwise_l2_median": float(np.median(pl)) if pl.size else None,
            "pcc_median": float(np.median(pv)) if pv.size else None,
            "pcc_abs_median": float(np.median(np.abs(pv))) if pv.size else None,
            "pcc_excluded": self.pcc_excluded,
            "pcc_histogram": _histogram(pv, -1.0, 1.0, 40),
        }


def _histogram(values: np.ndarray, lo: float, hi: float, bins: int) -> dict:
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return {"counts": counts.tolist(), "edges": edges.tolist()}


def residual_stats(originals: np.ndarray, attacked: np.ndarray) -> ResidualStats:
    """Residual statistics for an attacked corpus vs its originals.

    Images are 8-bit files by contract, so residuals are measured on the
    8-bit lattice: the integer difference scaled back to unit range. This
    keeps identical perturbations bit-identical across images instead of
    picking up float rounding that varies with the base pixel.
    """
    originals = _as_stack(originals)
    attacked = _as_stack(attacked)
    if originals.shape != attacked.shape:
        raise ContractError("original and attacked stacks differ in shape")
    deltas = (np.rint(attacked.astype(np.float64) * 255.0)
              - np.rint(originals.astype(np.float64) * 255.0)) / 255.0
    values = []
    excluded = 0
    for d, x in zip(deltas, originals):
        try:
            values.append(pcc(d, x))
        except UndefinedCorrelationError:
            excluded += 1
    return ResidualStats(
        pairwise_l2=pairwise_residual_l2(deltas),
        pcc_values=np.asarray(values),
        pcc_excluded=excluded,
        n=originals.shape[0],
    )


def mean_ssim(originals: np.ndarray, attacked: np.ndarray) -> float:
    originals = _as_stack(originals)
    attacked = _as_stack(attacked)
    return float(np.mean([ssim(a, b) for a, b in zip(originals, attacked)]))


def mean_perceptual_distance(originals: np.ndarray, attacked: np.ndarray,
                             fx: FeatureExtractor) -> float:
    originals = _as_stack(originals)
    attacked = _as_stack(attacked)
    return float(np.mean([
        perceptual_distance(a, b, fx) for a, b in zip(originals, attacked)
    ]))
