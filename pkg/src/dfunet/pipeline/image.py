"""8-bit image buffers, binary PPM I/O and bilinear resampling."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

COLORSPACES = ("RGB", "GRAY", "HSV", "YCBCR", "YIQ", "LAB", "LUV")


class ImageFormatError(ValueError):
    pass


@dataclass
class ImageBuffer:
    """Row-major interleaved 8-bit samples, stored as an ``H x W x C`` array."""

    pixels: np.ndarray
    colorspace: str = "RGB"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3) or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be H x W x {{1,3}}, got {px.shape}")
        if self.colorspace not in COLORSPACES:
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        if (self.colorspace == "GRAY") != (px.shape[2] == 1):
            raise ValueError(f"{self.colorspace} image cannot have {px.shape[2]} channels")
        self.pixels = np.ascontiguousarray(px, dtype=np.uint8)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.pixels.copy(), self.colorspace)


_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n\r]*[\n\r])*([^\s#]+)")


def read_ppm(data: bytes) -> ImageBuffer:
    """Parse a binary (P6) PPM with maxval 255. Comments and any whitespace
    are accepted between header fields."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _HEADER_TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise ImageFormatError(f"unsupported magic {fields[0]!r}; only binary P6 is read")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError("non-numeric PPM header field") from None
    if maxval != 255:
        raise ImageFormatError(f"maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ImageFormatError("PPM extents must be positive")
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ImageFormatError("missing whitespace after PPM header")
    pos += 1
    n = width * height * 3
    payload = data[pos:pos + n]
    if len(payload) < n:
        raise ImageFormatError(f"PPM payload truncated: {len(payload)} of {n} bytes")
    return ImageBuffer(np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy(), "RGB")


def write_ppm(img: ImageBuffer) -> bytes:
    """Encode a 3-channel buffer as P6. Non-RGB 3-channel buffers are written
    sample-for-sample (the colorspace tag is not stored)."""
    if img.channels != 3:
        raise ImageFormatError("PPM output needs a 3-channel image")
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def load_ppm(path) -> ImageBuffer:
    with open(os.fspath(path), "rb") as fh:
        return read_ppm(fh.read())


def save_ppm(path, img: ImageBuffer) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(write_ppm(img))


def to_gray(img: ImageBuffer) -> np.ndarray:
    """Luminance ``0.299 R + 0.587 G + 0.114 B`` as a float64 ``H x W`` array."""
    px = img.pixels.astype(np.float64)
    if img.channels == 1:
        return px[:, :, 0]
    return px @ np.array([0.299, 0.587, 0.114])


def _axis_weights(src: int, dst: int):
    pos = np.linspace(0.0, src - 1, dst) if dst > 1 else np.zeros(1)
    lo = np.clip(np.floor(pos).astype(int), 0, src - 1)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_array(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of an ``H x W [x C]`` float array."""
    if height < 1 or width < 1:
        raise ValueError("target extents must be positive")
    arr = np.asarray(arr, dtype=np.float64)
    r0, r1, fr = _axis_weights(arr.shape[0], height)
    c0, c1, fc = _axis_weights(arr.shape[1], width)
    extra = (None,) * (arr.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = arr[r0][:, c0] * (1 - fc) + arr[r0][:, c1] * fc
    bottom = arr[r1][:, c0] * (1 - fc) + arr[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def resize_image(img: ImageBuffer, width: int, height: int) -> ImageBuffer:
    return ImageBuffer(quantize(resize_array(img.pixels, height, width)), img.colorspace)
