"""Image convention: (3, H, W) float32 in [0, 1], sides divisible by 4."""

import numpy as np
import pytest

from untrace.core.images import (
    ImageCropWarning,
    as_image,
    center_crop_multiple,
    clip01,
    from_hwc,
    load_image,
    save_image,
    to_hwc,
    validate_image,
)
from untrace.errors import ContractError, DataIOError


def _img(side=32, value=0.5):
    return np.full((3, side, side), value, dtype=np.float32)


class TestValidate:
    def test_accepts_valid(self):
        validate_image(_img())

    @pytest.mark.parametrize(
        "bad",
        [
            np.zeros((3, 30, 32), dtype=np.float32),  # H not /4
            np.zeros((3, 32, 30), dtype=np.float32),  # W not /4
            np.zeros((1, 32, 32), dtype=np.float32),  # wrong channels
            np.zeros((32, 32, 3), dtype=np.float32),  # HWC layout
            np.zeros((3, 32, 32), dtype=np.float64),  # wrong dtype
            np.full((3, 32, 32), 1.5, dtype=np.float32),  # out of range
            np.full((3, 32, 32), -0.1, dtype=np.float32),
            np.full((3, 32, 32), np.nan, dtype=np.float32),
        ],
    )
    def test_rejects(self, bad):
        with pytest.raises(ContractError):
            validate_image(bad)

    def test_as_image_coerces_dtype(self):
        x = as_image(np.zeros((3, 16, 16), dtype=np.float64))
        assert x.dtype == np.float32


class TestRoundTrip:
    def test_png_roundtrip_is_lossless_on_grid(self, tmp_path):
        # values already on the 8-bit grid survive save/load exactly
        r = np.random.default_rng(0)
        img = (r.integers(0, 256, size=(3, 32, 32)) / 255.0).astype(np.float32)
        p = tmp_path / "x.png"
        save_image(img, p)
        back = load_image(p)
        np.testing.assert_array_equal(back, img)

    def test_save_quantizes_by_rounding(self, tmp_path):
        # 0.5004 is nearest to 128/255, not 127/255
        img = np.full((3, 32, 32), 0.5004, dtype=np.float32)
        p = tmp_path / "x.png"
        save_image(img, p)
        back = load_image(p)
        assert back[0, 0, 0] == pytest.approx(128 / 255.0, abs=1e-9)

    def test_load_crops_odd_sizes_with_warning(self, tmp_path):
        from PIL import Image as PILImage

        arr = np.zeros((34, 33, 3), dtype=np.uint8)
        p = tmp_path / "odd.png"
        PILImage.fromarray(arr, mode="RGB").save(p)
        with pytest.warns(ImageCropWarning):
            img = load_image(p)
        assert img.shape == (3, 32, 32)

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_image(tmp_path / "absent.png")

    def test_load_garbage_file(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"not an image")
        with pytest.raises(DataIOError):
            load_image(p)


class TestLayoutHelpers:
    def test_center_crop_multiple(self):
        arr = np.arange(7 * 9 * 3, dtype=np.uint8).reshape(7, 9, 3)
        out = center_crop_multiple(arr, 4)
        assert out.shape == (4, 8, 3)
        # crop is centered: rows 1..4 of 0..6, cols 0..7 of 0..8
        np.testing.assert_array_equal(out, arr[1:5, 0:8])

    def test_hwc_roundtrip(self):
        img = np.random.default_rng(1).random((3, 8, 12)).astype(np.float32)
        np.testing.assert_array_equal(from_hwc(to_hwc(img)), img)

    def test_clip01_pure(self):
        x = np.array([-1.0, 0.5, 2.0], dtype=np.float32)
        y = clip01(x)
        np.testing.assert_array_equal(y, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(x, [-1.0, 0.5, 2.0])
