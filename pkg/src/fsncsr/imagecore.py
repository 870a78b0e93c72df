"""Images, bicubic resampling and the bicubic low-pass / high-pass pair.

Images are float64 ``(H, W, C)`` arrays. The high-frequency residual is
signed; helpers that care about the value domain take an explicit flag
instead of relying on a wrapper type.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

KEYS_A = -0.5
FSHF_MAGIC = b"FSHF"


class ImageFormatError(ValueError):
    pass


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected H x W x {{1,3}} image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image extents must be positive")
    return arr


def cubic(x: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=256)
def _resize_matrix_cached(in_size: int, out_size: int) -> np.ndarray:
    scale = in_size / out_size
    stretch = max(scale, 1.0)
    support = 2.0 * stretch
    mat = np.zeros((out_size, in_size))
    for i in range(out_size):
        center = (i + 0.5) * scale - 0.5
        lo = int(np.floor(center - support))
        hi = int(np.ceil(center + support))
        taps = np.arange(lo, hi + 1)
        w = cubic((taps - center) / stretch)
        w = w / w.sum()
        np.add.at(mat[i], np.clip(taps, 0, in_size - 1), w)
    mat.setflags(write=False)
    return mat


def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) bicubic interpolation weights along one axis.

    Source coordinate of output sample i is (i + 0.5) * in/out - 0.5. When
    shrinking, the kernel is widened by the ratio and renormalized. Taps
    outside the image are folded onto the nearest edge pixel.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError("resize extents must be >= 1")
    return _resize_matrix_cached(int(in_size), int(out_size))


def bicubic_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize; the result is not clamped."""
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    rows = resize_matrix(img.shape[0], out_h)
    cols = resize_matrix(img.shape[1], out_w)
    return np.einsum("ih,hwc,jw->ijc", rows, img, cols, optimize=True)


def _check_divisible(img: np.ndarray, s: int) -> None:
    if s < 2:
        raise ValueError(f"scale factor must be an integer >= 2, got {s}")
    h, w = img.shape[:2]
    if h % s or w % s:
        raise ValueError(f"image size {h}x{w} is not divisible by scale {s}")


def downsample(img, s: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    _check_divisible(img, s)
    h, w = img.shape[:2]
    return np.clip(bicubic_resize(img, h // s, w // s), 0.0, 1.0)


def upsample(img, s: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if s < 1:
        raise ValueError("scale factor must be positive")
    h, w = img.shape[:2]
    return bicubic_resize(img, h * s, w * s)


def lowpass(x, s: int) -> np.ndarray:
    return upsample(downsample(x, s), s)


def highpass(x, s: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - lowpass(x, s)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_u8(img, high_frequency: bool = False) -> np.ndarray:
    """Map to integer levels.

    HR domain: round(clip(p, 0, 1) * 255) as uint8. High-frequency domain:
    round(clip(p, -1, 1) * 255) as int16 in [-255, 255], zero iff |p| < 0.5/255.
    """
    img = np.asarray(img, dtype=np.float64)
    if high_frequency:
        return _round_half_away(np.clip(img, -1.0, 1.0) * 255.0).astype(np.int16)
    return _round_half_away(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


# ----------------------------------------------------------------------
# file formats


PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_bit_depth(path) -> int:
    # Pillow silently narrows 16-bit RGB to 8 bits, so read IHDR ourselves
    with open(path, "rb") as fh:
        head = fh.read(26)
    if len(head) < 26 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: not a PNG file")
    return head[24]


def load_png(path) -> np.ndarray:
    try:
        depth = _png_bit_depth(path)
        if depth != 8:
            raise ImageFormatError(f"{path}: {depth}-bit PNG, need 8-bit L or RGB")
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG file")
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit L or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    return as_image(arr.astype(np.float64) / 255.0)


def save_png(img, path) -> None:
    img = as_image(img)
    q = quantize_u8(img)
    mode = "L" if q.shape[2] == 1 else "RGB"
    data = q[:, :, 0] if mode == "L" else q
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    PILImage.fromarray(data, mode=mode).save(tmp, format="PNG")
    tmp.replace(path)


def save_fshf(hf, path) -> None:
    """Raw high-frequency dump: magic, u32 H/W/C, then float32 LE planes."""
    hf = as_image(hf)
    h, w, c = hf.shape
    planar = np.ascontiguousarray(hf.transpose(2, 0, 1)).astype("<f4")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(FSHF_MAGIC + struct.pack("<III", h, w, c))
        fh.write(planar.tobytes())
    tmp.replace(path)


def load_fshf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != FSHF_MAGIC:
        raise ImageFormatError(f"{path}: missing FSHF header")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise ImageFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    planes = np.frombuffer(raw[16:], dtype="<f4").reshape(c, h, w)
    return planes.transpose(1, 2, 0).astype(np.float64)
