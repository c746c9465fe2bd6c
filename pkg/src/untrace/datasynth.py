"""Synthetic fingerprint injection.

Real images are turned into "synthetic" counterparts by two stochastic
stages: a resampling stage (down then up at a random interpolation mode,
which imprints grid-like interpolation artifacts) and a transform stage
(one of noise / blur / crop / jpeg / relight / combo, which imprints
convolution-like artifacts). Training pairs (x_r, x_s) come out of
make_pair.

All operations are pure given (image, config, rng) and preserve shape,
dtype (float32) and the [0,1] range.
"""

from __future__ import annotations

import enum

import cv2
import numpy as np

from .core.config import AblationFlags, SynthesisConfig
from .core.images import Image, clip01, from_hwc, to_hwc, validate_image
from .core.rng import Rng

_CV2_MODES = {
    "nearest": cv2.INTER_NEAREST,
    "bilinear": cv2.INTER_LINEAR,
    "bicubic": cv2.INTER_CUBIC,
}


class TransformKind(enum.Enum):
    NOISE = "noise"
    BLUR = "blur"
    CROP = "crop"
    JPEG = "jpeg"
    RELIGHT = "relight"
    COMBO = "combo"


# COMBO chains the five basic transforms in this fixed order.
COMBO_ORDER = (
    TransformKind.RELIGHT,
    TransformKind.CROP,
    TransformKind.BLUR,
    TransformKind.JPEG,
    TransformKind.NOISE,
)


def resize_image(x: Image, height: int, width: int, mode: str) -> Image:
    """Resize to (height, width) with the named interpolation mode.

    Bicubic interpolation can overshoot the unit interval, so the result
    is clamped back to [0,1].
    """
    if mode not in _CV2_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    hwc = to_hwc(x)
    out = cv2.resize(hwc, (width, height), interpolation=_CV2_MODES[mode])
    return clip01(from_hwc(out))


def blur_sigma_for_kernel(k: int) -> float:
    """Kernel-size-to-sigma convention used for the Gaussian blurs here."""
    return 0.3 * ((k - 1) * 0.5 - 1) + 0.8


def gaussian_kernel1d(k: int, sigma: float) -> np.ndarray:
    r = np.arange(k, dtype=np.float64) - (k - 1) / 2.0
    w = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return (w / w.sum()).astype(np.float32)


def gaussian_blur(x: Image, k: int, sigma: float | None = None) -> Image:
    """Separable Gaussian blur with reflection border handling."""
    if k == 1:
        return x
    if sigma is None:
        sigma = blur_sigma_for_kernel(k)
    kern = gaussian_kernel1d(k, sigma)
    hwc = to_hwc(x)
    out = cv2.sepFilter2D(hwc, -1, kern, kern, borderType=cv2.BORDER_REFLECT_101)
    return clip01(from_hwc(out))


def sample_unit(x: Image, cfg: SynthesisConfig, rng: Rng,
                ops: list[str] | None = None) -> Image:
    """Down/up resampling with probability p1, independent modes each way."""
    validate_image(x)
    if rng.random() >= cfg.p1:
        return x
    f = cfg.downscale_factor
    _, h, w = x.shape
    s_down = rng.pick(cfg.sampling_modes)
    s_up = rng.pick(cfg.sampling_modes)
    small = resize_image(x, h // f, w // f, s_down)
    out = resize_image(small, h, w, s_up)
    if ops is not None:
        ops.append(f"resample({s_down}->{s_up},x{f})")
    return out


def _noise(x: Image, cfg: SynthesisConfig, rng: Rng, ops) -> Image:
    lo, hi = cfg.noise_sigma_range
    sigma = rng.uniform(lo, hi)
    noise = rng.normal(0.0, sigma / 255.0, size=x.shape).astype(np.float32)
    if ops is not None:
        ops.append(f"noise(sigma={sigma:.3f})")
    return clip01(x + noise)


def _blur(x: Image, cfg: SynthesisConfig, rng: Rng, ops) -> Image:
    k = rng.pick(cfg.blur_kernel_sizes)
    if ops is not None:
        ops.append(f"blur(k={k})")
    return gaussian_blur(x, k)


def _crop(x: Image, cfg: SynthesisConfig, rng: Rng, ops) -> Image:
    lo, hi = cfg.crop_offset_range
    _, h, w = x.shape
    top, bottom, left, right = (rng.uniform(lo, hi) for _ in range(4))
    t, b = int(round(top * h)), int(round(bottom * h))
    l_, r_ = int(round(left * w)), int(round(right * w))
    cropped = x[:, t:h - b, l_:w - r_]
    if ops is not None:
        ops.append(f"crop(t={t},b={b},l={l_},r={r_})")
    return resize_image(cropped, h, w, "bilinear")


def _jpeg(x: Image, cfg: SynthesisConfig, rng: Rng, ops) -> Image:
    lo, hi = cfg.jpeg_quality_range
    q = int(rng.integers(lo, hi + 1))
    if ops is not None:
        ops.append(f"jpeg(q={q})")
    return jpeg_roundtrip(x, q)


def jpeg_roundtrip(x: Image, quality: int) -> Image:
    """Encode to JPEG at the given quality and decode back."""
    hwc = to_hwc(x)
    u8 = np.rint(hwc * 255.0).astype(np.uint8)
    bgr = np.ascontiguousarray(u8[:, :, ::-1])
    ok, buf = cv2.imencode(".jpg", bgr,
                           [int(cv2.IMWRITE_JPEG_QUALITY), int(quality)])
    if not ok:
        raise RuntimeError("jpeg encoding failed")
    dec = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    rgb = np.ascontiguousarray(dec[:, :, ::-1])
    return from_hwc(rgb.astype(np.float32) / 255.0)


def _relight(x: Image, cfg: SynthesisConfig, rng: Rng, ops) -> Image:
    lo, hi = cfg.relight_factor_range
    fb = rng.uniform(lo, hi)
    fc = rng.uniform(lo, hi)
    fs = rng.uniform(lo, hi)
    if ops is not None:
        ops.append(f"relight(b={fb:.3f},c={fc:.3f},s={fs:.3f})")
    return relight(x, fb, fc, fs)


def relight(x: Image, brightness: float, contrast: float,
            saturation: float) -> Image:
    """Scale brightness, contrast and saturation, in that order.

    Contrast interpolates toward the scalar image mean; saturation toward
    the per-pixel gray value (channel mean). Clamped once at the end.
    """
    out = x.astype(np.float32) * np.float32(brightness)
    m = out.mean(dtype=np.float64).astype(np.float32)
    out = m + np.float32(contrast) * (out - m)
    gray = out.mean(axis=0, keepdims=True)
    out = gray + np.float32(saturation) * (out - gray)
    return clip01(out)


_TRANSFORMS = {
    TransformKind.NOISE: _noise,
    TransformKind.BLUR: _blur,
    TransformKind.CROP: _crop,
    TransformKind.JPEG: _jpeg,
    TransformKind.RELIGHT: _relight,
}


def apply_transform(x: Image, kind: TransformKind, cfg: SynthesisConfig,
                    rng: Rng, ops: list[str] | None = None) -> Image:
    """Apply one transform with parameters drawn from cfg ranges."""
    validate_image(x)
    if kind is TransformKind.COMBO:
        if ops is not None:
            ops.append("combo[")
        for sub in COMBO_ORDER:
            x = _TRANSFORMS[sub](x, cfg, rng, ops)
        if ops is not None:
            ops.append("]")
        return x
    return _TRANSFORMS[kind](x, cfg, rng, ops)


def transform_unit(x: Image, cfg: SynthesisConfig, rng: Rng,
                   ops: list[str] | None = None) -> Image:
    """One uniformly drawn transform with probability p2, else identity."""
    validate_image(x)
    if rng.random() >= cfg.p2:
        return x
    kinds = list(TransformKind)
    kind = rng.pick(kinds)
    return apply_transform(x, kind, cfg, rng, ops)


def make_pair(x_r: Image, cfg: SynthesisConfig, rng: Rng,
              flags: AblationFlags | None = None,
              ops: list[str] | None = None) -> tuple[Image, Image]:
    """Build an (x_r, x_s) training pair.

    Each unit draws from its own derived stream, so disabling one unit
    leaves the other unit's randomness untouched.
    """
    validate_image(x_r)
    if flags is None:
        flags = AblationFlags()
    x_s = x_r
    if flags.use_sampling_unit:
        x_s = sample_unit(x_s, cfg, rng.child("sample"), ops)
    if flags.use_transformation_unit:
        x_s = transform_unit(x_s, cfg, rng.child("transform"), ops)
    return x_r, x_s
