"""Image representation and file I/O.

An image is a float32 numpy array of shape (3, H, W) with values in [0, 1],
red-green-blue channel order. H and W are multiples of 4 (the strided
encoder and the two x2 decoder upsamplings require it). Parameters quoted
on the 0-255 scale elsewhere are divided by 255 at the point of use.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ..errors import ContractError, DataIOError

# the universal pixel currency of the package
Image = np.ndarray

MIN_SIDE = 32


class ImageCropWarning(UserWarning):
    """Input dimensions were not divisible by 4; image was center-cropped."""


def validate_image(x: Image, *, what: str = "image") -> Image:
    if not isinstance(x, np.ndarray):
        raise ContractError(f"{what}: expected ndarray, got {type(x).__name__}")
    if x.ndim != 3 or x.shape[0] != 3:
        raise ContractError(f"{what}: expected shape (3, H, W), got {x.shape}")
    if x.dtype != np.float32:
        raise ContractError(f"{what}: expected float32, got {x.dtype}")
    h, w = x.shape[1], x.shape[2]
    if h % 4 or w % 4:
        raise ContractError(f"{what}: H and W must be divisible by 4, got {h}x{w}")
    if not np.isfinite(x).all():
        raise ContractError(f"{what}: non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ContractError(f"{what}: values outside [0, 1] ({x.min()}..{x.max()})")
    return x


def as_image(arr) -> Image:
    """Coerce to the internal convention (float32, contiguous) and validate."""
    x = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
    return validate_image(x)


def center_crop_multiple(arr_hwc: np.ndarray, multiple: int = 4) -> np.ndarray:
    h, w = arr_hwc.shape[:2]
    nh, nw = (h // multiple) * multiple, (w // multiple) * multiple
    if nh == h and nw == w:
        return arr_hwc
    top, left = (h - nh) // 2, (w - nw) // 2
    return arr_hwc[top : top + nh, left : left + nw]


def load_image(path) -> Image:
    """Decode a PNG/JPEG file to a valid image; 8-bit values map by v/255.

    Dimensions not divisible by 4 are center-cropped to the largest valid
    size and a warning is recorded.
    """
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise DataIOError(f"cannot decode image {path}: {e}") from e
    h, w = arr.shape[:2]
    if h % 4 or w % 4:
        warnings.warn(
            f"{path}: {h}x{w} not divisible by 4, center-cropping", ImageCropWarning
        )
        arr = center_crop_multiple(arr)
    if min(arr.shape[:2]) < MIN_SIDE:
        raise DataIOError(
            f"{path}: {arr.shape[0]}x{arr.shape[1]} below supported minimum "
            f"{MIN_SIDE}x{MIN_SIDE}"
        )
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32) / 255.0
    return chw


def save_image(img: Image, path) -> None:
    """Quantize to 8 bits and write PNG or JPEG depending on the suffix."""
    validate_image(img)
    path = Path(path)
    u8 = np.rint(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        PILImage.fromarray(u8, mode="RGB").save(path)
    except OSError as e:
        raise DataIOError(f"cannot write image {path}: {e}") from e


def to_hwc(img: Image) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(1, 2, 0))


def from_hwc(arr: np.ndarray) -> Image:
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float32)


def clip01(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0).astype(np.float32, copy=False)
