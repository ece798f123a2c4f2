"""Contrast enhancement: intensity adjustment, histogram equalisation, CLAHE.

Equalisation modes act on luminance; for RGB input the luminance change is
added equally to all three channels, which leaves the chroma untouched. A
channel (or luminance plane) with a single gray level carries no contrast and
is returned unchanged by every mode.
"""

from __future__ import annotations

import numpy as np
from skimage import exposure

from .image import ImageBuffer, quantize

MODES = ("intensity-adjust", "hist-eq", "clahe")


def _adjust_channel(ch: np.ndarray) -> np.ndarray:
    lo, hi = np.percentile(ch, [1, 99])
    if hi <= lo:
        return ch.copy()
    return quantize((ch.astype(np.float64) - lo) * (255.0 / (hi - lo)))


def equalize_levels(gray8: np.ndarray) -> np.ndarray:
    """Global histogram equalisation of a uint8 plane:
    ``level -> round(255 * (cdf - cdf_min) / (n - cdf_min))``."""
    hist = np.bincount(gray8.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    n = gray8.size
    if cdf_min == n:
        return gray8.copy()
    lut = quantize((cdf - cdf_min) * (255.0 / (n - cdf_min)))
    return lut[gray8]


def _clahe_levels(gray8: np.ndarray) -> np.ndarray:
    if gray8.min() == gray8.max():
        return gray8.copy()
    # kernel_size defaults to 1/8 of each extent, i.e. an 8x8 tile grid
    out = exposure.equalize_adapthist(gray8, clip_limit=0.01, nbins=256)
    return quantize(out * 255.0)


def contrast_enhance(img: ImageBuffer, mode: str) -> ImageBuffer:
    if mode not in MODES:
        raise ValueError(f"unsupported contrast mode {mode!r}; choose from {MODES}")
    if img.colorspace not in ("RGB", "GRAY"):
        raise ValueError(f"contrast enhancement needs RGB or GRAY input, got {img.colorspace}")
    px = img.pixels
    if mode == "intensity-adjust":
        out = np.stack([_adjust_channel(px[:, :, c]) for c in range(img.channels)], axis=-1)
        return ImageBuffer(out, img.colorspace)
    equalize = equalize_levels if mode == "hist-eq" else _clahe_levels
    if img.channels == 1:
        return ImageBuffer(equalize(px[:, :, 0])[:, :, None], "GRAY")
    luma = quantize(px.astype(np.float64) @ np.array([0.299, 0.587, 0.114]))
    delta = equalize(luma).astype(np.float64) - luma
    return ImageBuffer(quantize(px + delta[:, :, None]), "RGB")
