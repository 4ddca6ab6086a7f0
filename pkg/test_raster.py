"""Raster model, quantizer and image file I/O."""
import math
import struct
import zlib

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from models.raster import QuantSpec, Raster, psnr, quantize, recombine_luma, split_luma
from services.image_service import encode_codes, load_image, save_image
from utils.errors import DimensionMismatchError, ImageReadError, UnsupportedImageError


def write_pgm(path, width, height, codes, magic=b"P5", maxval=255):
    path.write_bytes(b"%s\n%d %d\n%d\n" % (magic, width, height, maxval) + bytes(codes))
    return path


def write_png16(path, pixels, color_type=2):
    """Encode a uint16 H×W×C array as a 16-bit PNG (no filtering)."""
    height, width = pixels.shape[:2]
    raw = b"".join(b"\x00" + pixels[r].astype(">u2").tobytes() for r in range(height))

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", width, height, 16, color_type, 0, 0, 0)
    body = chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + body)
    return path


class TestQuantize:
    def test_examples(self):
        assert quantize(0.26, 0.1) == pytest.approx(0.3)
        assert quantize(0.0, 1 / 255) == 0.0
        assert quantize(0.5, 1 / 255) == pytest.approx(128 / 255)

    @pytest.mark.parametrize("q", [1 / 255, 1 / 64, 0.1])
    def test_idempotent_and_bounded(self, q):
        x = np.linspace(0.0, 1.0, 100_001)
        once = quantize(x, q)
        assert_array_equal(quantize(once, q), once)
        assert np.abs(once - x).max() <= q / 2 + 1e-12

    def test_output_on_grid(self):
        x = np.random.default_rng(0).uniform(0, 1, 1000)
        k = quantize(x, 1 / 255) * 255
        assert_allclose(k, np.round(k), atol=1e-9)

    def test_half_step_rounds_up(self):
        assert quantize(0.05, 0.1) == pytest.approx(0.1)

    def test_levels(self):
        assert QuantSpec(1 / 255).levels == 255
        assert QuantSpec(0.3).levels is None
        with pytest.raises(ValueError):
            QuantSpec(0.0)


class TestRaster:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Raster(np.full((2, 2), 1.5))
        with pytest.raises(ValueError):
            Raster(np.zeros((2, 2, 2)))

    def test_immutable(self):
        r = Raster(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            r.data[0, 0, 0] = 0.5

    def test_from_array_clamps(self):
        r = Raster.from_array(np.array([[-0.5, 2.0]]))
        assert_array_equal(r.data[:, :, 0], [[0.0, 1.0]])


class TestLuma:
    def test_gray_pixel(self):
        luma, ratios = split_luma(Raster(np.full((1, 1, 3), 0.4)))
        assert luma.data[0, 0, 0] == pytest.approx(0.4)
        assert_allclose(ratios[0, 0], [1, 1, 1])

    def test_colored_pixel(self):
        luma, ratios = split_luma(Raster(np.array([[[0.2, 0.4, 0.1]]])))
        assert luma.data[0, 0, 0] == pytest.approx(0.4)
        assert_allclose(ratios[0, 0], [0.5, 1.0, 0.25])

    def test_black_pixel(self):
        _, ratios = split_luma(Raster(np.zeros((1, 1, 3))))
        assert_array_equal(ratios[0, 0], [1, 1, 1])

    def test_round_trip(self, rng):
        r = Raster(rng.uniform(0.01, 1.0, size=(6, 5, 3)))
        luma, ratios = split_luma(r)
        assert_allclose(recombine_luma(luma, ratios).data, r.data, atol=1e-9)

    def test_recombine_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            recombine_luma(Raster(np.zeros((2, 2))), np.ones((3, 3, 3)))


class TestPsnr:
    def test_identical_is_inf(self):
        r = Raster(np.full((3, 3), 0.3))
        assert math.isinf(psnr(r, r))

    def test_known_values(self):
        zeros = Raster(np.zeros((4, 4)))
        assert psnr(zeros, Raster(np.full((4, 4), 0.1))) == pytest.approx(20.0)
        assert psnr(zeros, Raster(np.ones((4, 4)))) == pytest.approx(0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            psnr(Raster(np.zeros((2, 2))), Raster(np.zeros((2, 3))))


class TestImageFiles:
    def test_pgm_codes(self, tmp_path):
        assert load_image(write_pgm(tmp_path / "w.pgm", 1, 1, [255])).data[0, 0, 0] == 1.0
        assert load_image(write_pgm(tmp_path / "b.pgm", 1, 1, [0])).data[0, 0, 0] == 0.0
        r = load_image(write_pgm(tmp_path / "two.pgm", 1, 2, [64, 128]))
        assert_array_equal(r.data[:, 0, 0], [64 / 255, 128 / 255])

    def test_header_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([10, 20]))
        assert_array_equal(load_image(path).data[0, :, 0], [10 / 255, 20 / 255])

    def test_encode_examples(self):
        codes = encode_codes(Raster(np.array([[0.2617, 1.0]])))
        assert_array_equal(codes[0, :, 0], [67, 255])

    @pytest.mark.parametrize("suffix", [".pgm", ".ppm", ".png"])
    def test_round_trip_quantized(self, tmp_path, rng, suffix):
        channels = 1 if suffix == ".pgm" else 3
        r = Raster(rng.integers(0, 256, size=(5, 7, channels)) / 255.0)
        back = load_image(save_image(r, tmp_path / f"img{suffix}"))
        assert_array_equal(back.data, r.data)

    def test_save_quantizes(self, tmp_path, rng):
        r = Raster(rng.uniform(0, 1, size=(4, 4, 3)))
        back = load_image(save_image(r, tmp_path / "img.ppm"))
        assert_array_equal(back.data, quantize(r.data, 1 / 255))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageReadError):
            load_image(tmp_path / "nope.png")

    def test_sixteen_bit_pgm(self, tmp_path):
        with pytest.raises(UnsupportedImageError):
            load_image(write_pgm(tmp_path / "deep.pgm", 1, 1, [0, 0], maxval=65535))

    def test_sixteen_bit_rgb_png(self, tmp_path):
        pixels = np.full((2, 2, 3), [0x1234, 0xABCD, 0xFFFF], dtype=np.uint16)
        with pytest.raises(UnsupportedImageError):
            load_image(write_png16(tmp_path / "deep.png", pixels))

    def test_sixteen_bit_gray_png(self, tmp_path):
        pixels = np.full((2, 3, 1), 0x0101, dtype=np.uint16)
        with pytest.raises(UnsupportedImageError):
            load_image(write_png16(tmp_path / "deep_gray.png", pixels, color_type=0))

    def test_ascii_pgm(self, tmp_path):
        path = tmp_path / "ascii.pgm"
        path.write_bytes(b"P2\n1 1\n255\n7\n")
        with pytest.raises(UnsupportedImageError):
            load_image(path)

    def test_truncated_raster(self, tmp_path):
        with pytest.raises(ImageReadError):
            load_image(write_pgm(tmp_path / "short.pgm", 2, 2, [1, 2, 3]))

    def test_unknown_suffix(self, tmp_path):
        path = tmp_path / "img.bmp"
        path.write_bytes(b"BM")
        with pytest.raises(UnsupportedImageError):
            load_image(path)
