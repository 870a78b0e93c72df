import math
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from fsncsr.imagecore import (
    ImageFormatError,
    bicubic_resize,
    cubic,
    downsample,
    highpass,
    load_fshf,
    load_png,
    lowpass,
    quantize_u8,
    resize_matrix,
    save_fshf,
    save_png,
    upsample,
)


def smooth_image(rng, h, w, c=3, sigma=4.0):
    x = gaussian_filter(rng.random((h, w, c)), sigma=(sigma, sigma, 0), mode="wrap")
    x -= x.min()
    return x / max(x.max(), 1e-12)


def keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def naive_resize(img, out_h, out_w):
    """Direct per-pixel weighted sum; shares nothing with the library code."""
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c))

    def taps(n_in, n_out, i):
        ratio = n_in / n_out
        stretch = max(ratio, 1.0)
        center = (i + 0.5) * ratio - 0.5
        result = {}
        total = 0.0
        for t in range(math.floor(center - 2 * stretch) - 1, math.ceil(center + 2 * stretch) + 2):
            wt = keys((t - center) / stretch)
            if wt:
                idx = min(max(t, 0), n_in - 1)
                result[idx] = result.get(idx, 0.0) + wt
                total += wt
        return {k: v / total for k, v in result.items()}

    for i in range(out_h):
        ti = taps(h, out_h, i)
        for j in range(out_w):
            tj = taps(w, out_w, j)
            for yi, wy in ti.items():
                for xj, wx in tj.items():
                    out[i, j] += wy * wx * img[yi, xj]
    return out


class TestKernel:
    def test_interpolating(self):
        np.testing.assert_allclose(cubic(np.array([0.0, 1.0, 2.0, -1.0, 2.5])), [1, 0, 0, 0, 0], atol=1e-15)

    def test_rows_are_partitions_of_unity(self):
        for n_in, n_out in [(8, 2), (3, 12), (7, 5), (1, 4), (64, 16)]:
            np.testing.assert_allclose(resize_matrix(n_in, n_out).sum(axis=1), 1.0, rtol=0, atol=1e-14)

    def test_matrix_is_read_only(self):
        with pytest.raises(ValueError):
            resize_matrix(4, 8)[0, 0] = 1.0

    def test_hand_computed_upsample_value(self):
        # [0, 1] -> 4 samples; output 1 sits at 0.25 with weights
        # (-0.0703125, 0.8671875, 0.2265625, -0.0234375), edge-clamped taps
        out = bicubic_resize(np.array([[0.0, 1.0]]).reshape(1, 2, 1), 1, 4)
        assert out[0, 1, 0] == pytest.approx(0.203125, abs=1e-15)
        assert out[0, 2, 0] == pytest.approx(1 - 0.203125, abs=1e-15)


class TestResize:
    @pytest.mark.parametrize("shape,out", [((8, 8, 1), (4, 4)), ((4, 4, 3), (16, 16)), ((6, 10, 1), (3, 5)), ((5, 3, 3), (7, 9))])
    def test_matches_naive_oracle(self, shape, out):
        img = np.random.default_rng(1).random(shape)
        np.testing.assert_allclose(bicubic_resize(img, *out), naive_resize(img, *out), rtol=0, atol=1e-12)

    def test_ramp_downscale_matches_oracle(self):
        ramp = np.tile(np.linspace(0, 1, 8), (8, 1))[:, :, None]
        np.testing.assert_allclose(downsample(ramp, 2), np.clip(naive_resize(ramp, 4, 4), 0, 1), atol=1e-12)

    @given(st.floats(0.0, 1.0), st.sampled_from([2, 3, 4, 8]), st.integers(1, 4))
    @settings(max_examples=40, deadline=None)
    def test_constant_preserved(self, c, s, n):
        img = np.full((n * s, n * s + s, 3), c)
        np.testing.assert_allclose(downsample(img, s), c, atol=1e-12)
        np.testing.assert_allclose(upsample(np.full((n, n, 1), c), s), c, atol=1e-12)

    def test_single_pixel_upsample(self):
        out = upsample(np.full((1, 1, 3), 0.3), 4)
        assert out.shape == (4, 4, 3)
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_smooth_blocks_downsample_to_block_values(self):
        rng = np.random.default_rng(0)
        blocks = smooth_image(rng, 16, 16, 1, sigma=3.0)
        img = np.kron(blocks, np.ones((2, 2, 1)))
        assert np.max(np.abs(downsample(img, 2) - blocks)) < 0.05

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            downsample(np.zeros((10, 12, 3)), 4)

    def test_downsample_clamps_upsample_does_not(self):
        checker = np.indices((8, 8)).sum(axis=0) % 2
        img = np.kron(checker, np.ones((2, 2)))[:, :, None].astype(float)
        assert downsample(img, 2).max() <= 1.0 and downsample(img, 2).min() >= 0.0
        up = upsample(np.array([[0.0, 1.0, 0.0]]).reshape(1, 3, 1), 4)
        assert up.max() > 1.0 or up.min() < 0.0

    def test_down_after_up_is_near_identity(self):
        y = smooth_image(np.random.default_rng(2), 32, 32)
        mse = np.mean((downsample(upsample(y, 4), 4) - y) ** 2)
        assert 10 * math.log10(1 / mse) > 40


class TestFrequencySplit:
    @given(st.sampled_from([2, 4, 8]), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_exact_recombination(self, s, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((2 * s * 2, 3 * s, 3))
        np.testing.assert_allclose(lowpass(x, s) + highpass(x, s), x, rtol=0, atol=1e-12)

    def test_constant_has_no_high_frequency(self):
        x = np.full((32, 32, 3), 0.42)
        np.testing.assert_allclose(lowpass(x, 4), 0.42, atol=1e-12)
        np.testing.assert_allclose(highpass(x, 4), 0.0, atol=1e-12)

    def test_shapes(self):
        x = np.zeros((24, 16, 1))
        assert lowpass(x, 4).shape == highpass(x, 4).shape == (24, 16, 1)

    @pytest.mark.parametrize("s", [2, 4])
    def test_lowpass_nearly_idempotent_on_smooth_images(self, s):
        x = smooth_image(np.random.default_rng(s), 64, 64, sigma=4.0)
        low = lowpass(x, s)
        rel = np.linalg.norm(lowpass(low, s) - low) / np.linalg.norm(low)
        assert rel < 0.02

    @pytest.mark.parametrize("s", [2, 4, 8])
    def test_downsample_ignores_lowpass_on_lr_smooth_images(self, s):
        # white noise leaves up to ~0.14 here; LR-band-limited content stays well inside 0.02
        x = smooth_image(np.random.default_rng(s), 128, 128, sigma=2.0 * s)
        assert np.max(np.abs(downsample(lowpass(x, s), s) - downsample(x, s))) < 0.02

    def test_noise_has_more_high_frequency_than_blur(self):
        rng = np.random.default_rng(5)
        noise = rng.random((64, 64, 3))
        blurred = smooth_image(rng, 64, 64, sigma=3.0)
        assert np.abs(highpass(noise, 4)).mean() > np.abs(highpass(blurred, 4)).mean()


class TestQuantize:
    def test_hr_levels(self):
        q = quantize_u8(np.array([0.0, 1.0, 0.5, -0.3, 1.7, 0.5 / 255]))
        assert q.dtype == np.uint8
        np.testing.assert_array_equal(q, [0, 255, 128, 0, 255, 1])

    def test_signed_levels(self):
        q = quantize_u8(np.array([1 / 600, -1 / 600, 0.5, -0.5, 2.0, -2.0, 0.49 / 255]), high_frequency=True)
        assert q.dtype == np.int16
        np.testing.assert_array_equal(q, [0, 0, 128, -128, 255, -255, 0])

    def test_round_trip_error(self):
        x = np.random.default_rng(0).random(10_000)
        assert np.max(np.abs(quantize_u8(x) / 255.0 - x)) <= 1 / 510 + 1e-15

    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=50))
    def test_monotone(self, values):
        v = np.sort(np.array(values))
        for hf in (False, True):
            q = quantize_u8(v, high_frequency=hf).astype(int)
            assert np.all(np.diff(q) >= 0)


def _png_chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)


def handmade_png(pixels: np.ndarray, color_type: int = 2, bit_depth: int = 8) -> bytes:
    h, w = pixels.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    rows = b"".join(b"\x00" + pixels[i].astype(">u1" if bit_depth == 8 else ">u2").tobytes() for i in range(h))
    return b"\x89PNG\r\n\x1a\n" + _png_chunk(b"IHDR", ihdr) + _png_chunk(b"IDAT", zlib.compress(rows)) + _png_chunk(b"IEND", b"")


class TestFiles:
    def test_known_bytes_fixture(self, tmp_path):
        px = np.array([[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [128, 64, 1]]], dtype=np.uint8)
        path = tmp_path / "fixture.png"
        path.write_bytes(handmade_png(px))
        np.testing.assert_array_equal(load_png(path), px / 255.0)

    def test_gray_fixture(self, tmp_path):
        px = np.array([[0, 17], [200, 255]], dtype=np.uint8)
        path = tmp_path / "g.png"
        path.write_bytes(handmade_png(px, color_type=0))
        img = load_png(path)
        assert img.shape == (2, 2, 1)
        np.testing.assert_array_equal(img[:, :, 0], px / 255.0)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        path.write_bytes(handmade_png(np.zeros((2, 2, 3), dtype=np.uint16), bit_depth=16))
        with pytest.raises(ImageFormatError):
            load_png(path)

    def test_truncated_rejected(self, tmp_path):
        raw = handmade_png(np.zeros((8, 8, 3), dtype=np.uint8))
        path = tmp_path / "cut.png"
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(ImageFormatError):
            load_png(path)

    def test_not_png_rejected(self, tmp_path):
        path = tmp_path / "x.png"
        path.write_bytes(b"definitely not an image")
        with pytest.raises(ImageFormatError):
            load_png(path)

    def test_png_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)) / 255.0
        save_png(img, tmp_path / "a.png")
        np.testing.assert_array_equal(load_png(tmp_path / "a.png"), img)
        assert not list(tmp_path.glob("*.tmp"))

    def test_fshf_round_trip(self, tmp_path):
        hf = np.random.default_rng(0).uniform(-1, 1, (6, 4, 3))
        save_fshf(hf, tmp_path / "h.fshf")
        raw = (tmp_path / "h.fshf").read_bytes()
        assert raw[:4] == b"FSHF" and struct.unpack("<III", raw[4:16]) == (6, 4, 3)
        assert len(raw) == 16 + 4 * 6 * 4 * 3
        # planar: first plane is channel 0 in row-major order
        assert np.frombuffer(raw[16:20], "<f4")[0] == np.float32(hf[0, 0, 0])
        assert np.frombuffer(raw[20:24], "<f4")[0] == np.float32(hf[0, 1, 0])
        np.testing.assert_array_equal(load_fshf(tmp_path / "h.fshf"), hf.astype(np.float32))

    def test_fshf_bad_header(self, tmp_path):
        (tmp_path / "bad.fshf").write_bytes(b"FSHX" + bytes(12))
        with pytest.raises(ImageFormatError):
            load_fshf(tmp_path / "bad.fshf")
        (tmp_path / "short.fshf").write_bytes(b"FSHF" + struct.pack("<III", 2, 2, 1) + bytes(4))
        with pytest.raises(ImageFormatError):
            load_fshf(tmp_path / "short.fshf")
