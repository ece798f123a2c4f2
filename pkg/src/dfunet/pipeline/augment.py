"""Fifteen-way patch augmentation."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import List

import numpy as np
from skimage.transform import rotate

from .color import convert_colorspace
from .contrast import contrast_enhance
from .image import ImageBuffer, quantize, resize_array

AUGMENTATIONS = (
    "rot90", "rot180", "rot270",
    "flip-h", "flip-v", "flip-hv",
    "ycbcr", "yiq", "hsv", "lab",
    "intensity-adjust", "hist-eq", "clahe",
    "crop1", "crop2",
)
CROP_FRACTION = 0.9


@dataclass
class PatchRecord:
    image: ImageBuffer
    label: int
    source_id: str
    provenance: str = "original"
    patch_id: str = ""

    def __post_init__(self):
        if not self.source_id:
            raise ValueError("source_id must be non-empty")
        if self.label < 0:
            raise ValueError("label must be a non-negative class index")


def rotate90(px: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Clockwise rotation by ``quarter_turns`` * 90 degrees."""
    return np.ascontiguousarray(np.rot90(px, k=-quarter_turns, axes=(0, 1)))


def random_crop(img: ImageBuffer, rng: np.random.Generator) -> ImageBuffer:
    """Rotate by a random angle (bilinear, reflect padding), cut a 90% window
    at a random offset and rescale it to the original size."""
    h, w = img.height, img.width
    angle = rng.uniform(0.0, 360.0)
    ch, cw = max(1, round(CROP_FRACTION * h)), max(1, round(CROP_FRACTION * w))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    turned = rotate(img.pixels.astype(np.float64), angle, order=1, mode="reflect", preserve_range=True)
    window = turned[y0:y0 + ch, x0:x0 + cw]
    return ImageBuffer(quantize(resize_array(window, h, w)), img.colorspace)


def _crop_rng(seed: int, patch: PatchRecord) -> np.random.Generator:
    key = zlib.crc32(f"{patch.source_id}\0{patch.patch_id}".encode("utf-8"))
    return np.random.default_rng([int(seed), key])


def augmented_count(n_originals: int) -> int:
    """Number of patches augmentation produces from ``n_originals`` inputs."""
    if n_originals < 0:
        raise ValueError("patch count must be non-negative")
    return len(AUGMENTATIONS) * n_originals


def augment_patch(patch: PatchRecord, seed: int = 0) -> List[PatchRecord]:
    """Return exactly fifteen variants, in ``AUGMENTATIONS`` order; the
    unmodified original is not among them."""
    img = patch.image
    if img.colorspace != "RGB":
        raise ValueError(f"augmentation needs an RGB patch, got {img.colorspace}")
    px = img.pixels
    rng = _crop_rng(seed, patch)
    out = [
        ImageBuffer(rotate90(px, 1)),
        ImageBuffer(rotate90(px, 2)),
        ImageBuffer(rotate90(px, 3)),
        ImageBuffer(px[:, ::-1].copy()),
        ImageBuffer(px[::-1, :].copy()),
        ImageBuffer(px[::-1, ::-1].copy()),
        convert_colorspace(img, "YCBCR"),
        convert_colorspace(img, "YIQ"),
        convert_colorspace(img, "HSV"),
        convert_colorspace(img, "LAB"),
        contrast_enhance(img, "intensity-adjust"),
        contrast_enhance(img, "hist-eq"),
        contrast_enhance(img, "clahe"),
        random_crop(img, rng),
        random_crop(img, rng),
    ]
    return [replace(patch, image=im, provenance=f"augmented:{kind}")
            for kind, im in zip(AUGMENTATIONS, out)]
