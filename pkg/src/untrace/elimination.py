"""Adversarial image production: model forward pass plus GBMS smoothing.

GBMS composes a small Gaussian blur with mean-shift filtering, applied
strictly after the model. The mean-shift runs in joint (x, y, r, g, b)
space with flat kernels: each pixel's window mean is taken over the
spatial disk around its current position, restricted to neighbors within
the color radius of its current color, iterated to (approximate)
convergence. It operates directly on unit-interval float pixels, so tiny
radii degrade gracefully to the identity instead of quantizing.
"""

from __future__ import annotations

import numpy as np

from .attack_model import AttackModel, forward
from .core.config import GbmsParams
from .core.images import Image, validate_image
from .datasynth import gaussian_blur


def _disk_offsets(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    out = [
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dy * dy + dx * dx <= radius * radius
    ]
    return np.asarray(out, dtype=np.int64)


def mean_shift_filter(x: Image, spatial_radius: float, color_radius: float,
                      iterations: int) -> Image:
    """Flat-kernel joint-domain mean-shift filtering."""
    validate_image(x)
    offsets = _disk_offsets(spatial_radius)
    if len(offsets) <= 1 or iterations < 1:
        return x.copy()
    h, w = x.shape[1], x.shape[2]
    src = x.transpose(1, 2, 0).astype(np.float32)  # HWC gather source
    colors = src.copy()
    ys = np.broadcast_to(np.arange(h, dtype=np.float32)[:, None], (h, w)).copy()
    xs = np.broadcast_to(np.arange(w, dtype=np.float32)[None, :], (h, w)).copy()
    cr2 = np.float32(color_radius * color_radius)
    for _ in range(iterations):
        cy = np.clip(np.rint(ys).astype(np.int64), 0, h - 1)
        cx = np.clip(np.rint(xs).astype(np.int64), 0, w - 1)
        acc_c = np.zeros_like(colors)
        acc_y = np.zeros((h, w), dtype=np.float32)
        acc_x = np.zeros((h, w), dtype=np.float32)
        count = np.zeros((h, w), dtype=np.float32)
        for dy, dx in offsets:
            ny = np.clip(cy + dy, 0, h - 1)
            nx = np.clip(cx + dx, 0, w - 1)
            nc = src[ny, nx]
            d = nc - colors
            mask = (d * d).sum(axis=-1) <= cr2
            mf = mask.astype(np.float32)
            acc_c += nc * mf[..., None]
            acc_y += ny.astype(np.float32) * mf
            acc_x += nx.astype(np.float32) * mf
            count += mf
        # pixels whose window holds no color-compatible neighbor stay put
        safe = np.maximum(count, 1.0)
        new_c = acc_c / safe[..., None]
        new_y = acc_y / safe
        new_x = acc_x / safe
        moved = count > 0.0
        colors = np.where(moved[..., None], new_c, colors)
        ys = np.where(moved, new_y, ys)
        xs = np.where(moved, new_x, xs)
    return np.ascontiguousarray(colors.transpose(2, 0, 1)).astype(np.float32)


def gbms(x: Image, p: GbmsParams) -> Image:
    """Gaussian blur followed by mean-shift filtering."""
    validate_image(x)
    p.validate()
    out = gaussian_blur(x, p.blur_kernel, p.blur_sigma)
    return mean_shift_filter(out, p.spatial_radius, p.color_radius, p.iterations)


def attack(model: AttackModel, x: Image, p: GbmsParams,
           use_gbms: bool = True) -> Image:
    """The adversarial map: smoothing applied to the model output."""
    y = forward(model, x)
    if not use_gbms:
        return y
    return gbms(y, p)


def attack_corpus(model: AttackModel, images: np.ndarray, p: GbmsParams,
                  use_gbms: bool = True, batch_size: int = 16) -> np.ndarray:
    """Apply the attack to a stack (N,3,H,W); returns the attacked stack."""
    outs = []
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start:start + batch_size]
        y = forward(model, chunk)
        if use_gbms:
            y = np.stack([gbms(img, p) for img in y])
        outs.append(y)
    return np.concatenate(outs, axis=0)
