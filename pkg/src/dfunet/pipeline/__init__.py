"""Image I/O, colour conversion, augmentation, normalisation and data splits."""

from .augment import AUGMENTATIONS, PatchRecord, augment_patch
from .color import convert_colorspace, hsv_to_rgb
from .contrast import contrast_enhance
from .dataset import DatasetManifest, FoldPlan, ManifestEntry, make_folds, read_manifest, scan_dataset
from .image import ImageBuffer, ImageFormatError, load_ppm, read_ppm, resize_image, save_ppm, to_gray, write_ppm
from .normalize import Normalizer, apply_normalizer, fit_normalizer

__all__ = [
    "AUGMENTATIONS", "PatchRecord", "augment_patch", "convert_colorspace", "hsv_to_rgb",
    "contrast_enhance", "DatasetManifest", "FoldPlan", "ManifestEntry", "make_folds",
    "read_manifest", "scan_dataset", "ImageBuffer", "ImageFormatError", "load_ppm", "read_ppm",
    "resize_image", "save_ppm", "to_gray", "write_ppm", "Normalizer", "apply_normalizer",
    "fit_normalizer",
]
