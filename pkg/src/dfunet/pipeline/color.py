"""RGB to HSV / YCbCr / YIQ / L*a*b* / L*u*v* with 8-bit requantisation.

Channel encodings:

* HSV: hue turn, saturation and value each scaled to 0..255.
* YCBCR: full-range BT.601, chroma offset 128.
* YIQ: Y scaled to 0..255; I and Q mapped linearly from their extreme
  ranges onto 0..255.
* LAB / LUV: CIE under D65 with sRGB linearisation; L scaled by 255/100,
  a/b offset by 128, u/v mapped from [-134, 220] / [-140, 122].
"""

from __future__ import annotations

import numpy as np
from skimage import color as skcolor

from .image import ImageBuffer, quantize

_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.595716, -0.274453, -0.321263],
    [0.211456, -0.522591, 0.311135],
])
_I_MAX = 0.595716
_Q_MAX = 0.522591


def rgb_to_hsv_float(rgb: np.ndarray) -> np.ndarray:
    """Hexcone HSV with all three components in [0, 1] (hue as a turn)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    chroma = v - rgb.min(axis=-1)
    s = np.divide(chroma, v, out=np.zeros_like(v), where=v > 0)
    safe = np.where(chroma > 0, chroma, 1.0)
    h = np.where(v == r, ((g - b) / safe) % 6.0,
                 np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(chroma > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb_float(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    k = lambda n: (n + h * 6.0) % 6.0  # noqa: E731
    f = lambda n: v - v * s * np.clip(np.minimum(k(n), 4.0 - k(n)), 0.0, 1.0)  # noqa: E731
    return np.stack([f(5.0), f(3.0), f(1.0)], axis=-1)


def convert_colorspace(img: ImageBuffer, target: str) -> ImageBuffer:
    target = target.upper()
    if img.colorspace != "RGB":
        raise ValueError(f"conversion needs an RGB source, got {img.colorspace}")
    rgb = img.pixels.astype(np.float64)
    if target == "RGB":
        return img.copy()
    if target == "GRAY":
        return ImageBuffer(quantize(rgb @ _YCBCR[0])[:, :, None], "GRAY")
    if target == "HSV":
        out = rgb_to_hsv_float(rgb / 255.0) * 255.0
    elif target == "YCBCR":
        out = rgb @ _YCBCR.T + np.array([0.0, 128.0, 128.0])
    elif target == "YIQ":
        yiq = rgb @ _YIQ.T
        out = np.stack([
            yiq[..., 0],
            (yiq[..., 1] / (_I_MAX * 255.0) + 1.0) * 127.5,
            (yiq[..., 2] / (_Q_MAX * 255.0) + 1.0) * 127.5,
        ], axis=-1)
    elif target == "LAB":
        lab = skcolor.rgb2lab(rgb / 255.0, illuminant="D65")
        out = np.stack([lab[..., 0] * 255.0 / 100.0, lab[..., 1] + 128.0, lab[..., 2] + 128.0], axis=-1)
    elif target == "LUV":
        luv = skcolor.rgb2luv(rgb / 255.0)
        out = np.stack([
            luv[..., 0] * 255.0 / 100.0,
            (luv[..., 1] + 134.0) * 255.0 / 354.0,
            (luv[..., 2] + 140.0) * 255.0 / 262.0,
        ], axis=-1)
    else:
        raise ValueError(f"unsupported target colorspace {target!r}")
    return ImageBuffer(quantize(out), target)


def hsv_to_rgb(img: ImageBuffer) -> ImageBuffer:
    """Inverse of the 8-bit HSV encoding."""
    if img.colorspace != "HSV":
        raise ValueError(f"expected an HSV image, got {img.colorspace}")
    return ImageBuffer(quantize(hsv_to_rgb_float(img.pixels / 255.0) * 255.0), "RGB")
