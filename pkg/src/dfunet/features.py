"""Hand-crafted patch descriptors: uniform LBP, HOG and colour histograms.

Every descriptor runs on the patch resized to 256 x 256. Feature vectors carry
a layout naming each segment and its offset so that a feature file is
self-describing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .pipeline.color import convert_colorspace
from .pipeline.image import ImageBuffer, resize_image, to_gray

SELECTIONS = ("lbp", "lbp+hog", "lbp+hog+color")


@dataclass(frozen=True)
class LbpConfig:
    radius: int = 1
    neighbors: int = 8
    mapping: str = "uniform-59"


@dataclass(frozen=True)
class HogConfig:
    cell: int = 8
    block: int = 2
    block_stride: int = 1
    bins: int = 9
    clip: float = 0.2


@dataclass(frozen=True)
class ColorConfig:
    bins: int = 32
    spaces: Tuple[str, ...] = ("RGB", "HSV", "LUV")


@dataclass(frozen=True)
class FeatureConfig:
    lbp: LbpConfig = field(default_factory=LbpConfig)
    hog: HogConfig = field(default_factory=HogConfig)
    color: ColorConfig = field(default_factory=ColorConfig)
    size: Tuple[int, int] = (256, 256)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["color"]["spaces"] = list(self.color.spaces)
        d["size"] = list(self.size)
        return d


@dataclass
class FeatureVector:
    values: np.ndarray
    #: ``(segment name, offset, length)`` in vector order
    layout: List[Tuple[str, int, int]]

    def segment(self, name: str) -> np.ndarray:
        for seg, off, n in self.layout:
            if seg == name:
                return self.values[off:off + n]
        raise KeyError(name)


def resize_patch(img: ImageBuffer, width: int = 256, height: int = 256) -> ImageBuffer:
    """Corner-aligned bilinear resize."""
    return resize_image(img, width, height)


# -- LBP ----------------------------------------------------------------------

def _transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


UNIFORM_CODES = [c for c in range(256) if _transitions(c) <= 2]
NONUNIFORM_BIN = len(UNIFORM_CODES)
#: 8-bit code -> histogram bin; the 58 uniform codes in ascending order, then one shared bin
LBP_BIN = np.full(256, NONUNIFORM_BIN, dtype=np.int64)
LBP_BIN[UNIFORM_CODES] = np.arange(len(UNIFORM_CODES))

# clockwise from the top-left neighbour; the first neighbour is the most significant bit
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """8-neighbour codes of the interior pixels; a neighbour sets its bit when
    it is >= the centre."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    if h < 3 or w < 3:
        raise ValueError("LBP needs an image of at least 3x3")
    center = g[1:-1, 1:-1]
    code = np.zeros(center.shape, dtype=np.int64)
    for b, (dy, dx) in enumerate(_OFFSETS):
        neighbour = g[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        code |= (neighbour >= center).astype(np.int64) << (7 - b)
    return code


def lbp_histogram(gray, cfg: LbpConfig = LbpConfig()) -> np.ndarray:
    if (cfg.radius, cfg.neighbors, cfg.mapping) != (1, 8, "uniform-59"):
        raise ValueError("only the radius-1, 8-neighbour uniform-59 LBP is supported")
    if isinstance(gray, ImageBuffer):
        gray = to_gray(gray)
    hist = np.bincount(LBP_BIN[lbp_codes(gray)].ravel(), minlength=NONUNIFORM_BIN + 1).astype(np.float64)
    return hist / hist.sum()


# -- HOG ----------------------------------------------------------------------

def _orientation_histograms(gray: np.ndarray, cfg: HogConfig) -> np.ndarray:
    g = np.asarray(gray, dtype=np.float64)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    mag = np.hypot(gx, gy)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # bin centres at 0, 20, ..., 160 degrees; votes split linearly between neighbours
    pos = angle / (180.0 / cfg.bins)
    lo = np.floor(pos).astype(np.int64) % cfg.bins
    frac = pos - np.floor(pos)
    hi = (lo + 1) % cfg.bins
    ch, cw = g.shape[0] // cfg.cell, g.shape[1] // cfg.cell
    cell_idx = (np.arange(ch * cfg.cell)[:, None] // cfg.cell) * cw + (np.arange(cw * cfg.cell)[None, :] // cfg.cell)
    crop = (slice(0, ch * cfg.cell), slice(0, cw * cfg.cell))
    flat_cell = cell_idx.ravel()
    hist = np.zeros(ch * cw * cfg.bins)
    np.add.at(hist, flat_cell * cfg.bins + lo[crop].ravel(), (mag[crop] * (1 - frac[crop])).ravel())
    np.add.at(hist, flat_cell * cfg.bins + hi[crop].ravel(), (mag[crop] * frac[crop]).ravel())
    return hist.reshape(ch, cw, cfg.bins)


def _l2(v: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + eps * eps)


def hog_descriptor(gray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Dalal-Triggs HOG with L2-Hys block normalisation.

    Blocks are visited row-major, cells within a block row-major, then bins.
    """
    if isinstance(gray, ImageBuffer):
        gray = to_gray(gray)
    gray = np.asarray(gray, dtype=np.float64)
    if min(gray.shape) < cfg.cell * cfg.block:
        raise ValueError(f"image smaller than one {cfg.block}x{cfg.block}-cell block")
    cells = _orientation_histograms(gray, cfg)
    ch, cw, _ = cells.shape
    by = (ch - cfg.block) // cfg.block_stride + 1
    bx = (cw - cfg.block) // cfg.block_stride + 1
    blocks = np.empty((by, bx, cfg.block * cfg.block * cfg.bins))
    for i in range(by):
        for j in range(bx):
            y, x = i * cfg.block_stride, j * cfg.block_stride
            blocks[i, j] = cells[y:y + cfg.block, x:x + cfg.block].ravel()
    blocks = _l2(np.minimum(_l2(blocks), cfg.clip))
    return blocks.ravel()


def hog_length(size: Tuple[int, int] = (256, 256), cfg: HogConfig = HogConfig()) -> int:
    ch, cw = size[0] // cfg.cell, size[1] // cfg.cell
    by = (ch - cfg.block) // cfg.block_stride + 1
    bx = (cw - cfg.block) // cfg.block_stride + 1
    return by * bx * cfg.block * cfg.block * cfg.bins


# -- colour -------------------------------------------------------------------

def color_histograms(img: ImageBuffer, cfg: ColorConfig = ColorConfig()) -> np.ndarray:
    """Per-channel histograms over 0..255 for each configured space, each
    normalised to sum 1; order is spaces then channels."""
    if img.colorspace != "RGB":
        raise ValueError("colour histograms need an RGB image")
    parts = []
    width = 256 // cfg.bins
    for space in cfg.spaces:
        px = convert_colorspace(img, space).pixels
        for c in range(px.shape[2]):
            hist = np.bincount(px[:, :, c].ravel() // width, minlength=cfg.bins).astype(np.float64)
            parts.append(hist / hist.sum())
    return np.concatenate(parts)


# -- assembly -----------------------------------------------------------------

def extract_features(image: ImageBuffer, which: str = "lbp+hog+color",
                     cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Resize, compute the selected descriptors and concatenate lbp | hog | colour."""
    if which not in SELECTIONS:
        raise ValueError(f"unknown descriptor selection {which!r}; choose from {SELECTIONS}")
    img = resize_patch(image, cfg.size[1], cfg.size[0])
    if img.colorspace != "RGB" and "color" in which:
        raise ValueError("colour descriptors need an RGB patch")
    gray = to_gray(img)
    segments: List[Tuple[str, np.ndarray]] = [("lbp", lbp_histogram(gray, cfg.lbp))]
    if "hog" in which:
        segments.append(("hog", hog_descriptor(gray, cfg.hog)))
    if "color" in which:
        hists = color_histograms(img, cfg.color)
        per_space = 3 * cfg.color.bins
        for k, space in enumerate(cfg.color.spaces):
            segments.append((f"color:{space}", hists[k * per_space:(k + 1) * per_space]))
    layout, offset = [], 0
    for name, vals in segments:
        layout.append((name, offset, len(vals)))
        offset += len(vals)
    return FeatureVector(np.concatenate([v for _, v in segments]), layout)


def feature_length(which: str, cfg: FeatureConfig = FeatureConfig()) -> int:
    n = 59
    if "hog" in which:
        n += hog_length(cfg.size, cfg.hog)
    if "color" in which:
        n += len(cfg.color.spaces) * 3 * cfg.color.bins
    return n


# -- feature files ------------------------------------------------------------

def write_feature_file(path, ids: Sequence[str], labels: Sequence[int], rows: np.ndarray,
                       cfg: FeatureConfig, layout, which: str) -> None:
    """CSV ``id,label,f0..fN`` plus a ``<path>.json`` sidecar with config and layout."""
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + [f"f{i}" for i in range(rows.shape[1])])
        for ident, label, row in zip(ids, labels, rows):
            w.writerow([ident, int(label)] + [repr(float(v)) for v in row])
    sidecar = {"which": which, "config": cfg.to_dict(),
               "layout": [{"segment": s, "offset": o, "length": n} for s, o, n in layout]}
    with open(f"{path}.json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def read_feature_file(path):
    """Returns ``(ids, labels, matrix)``."""
    ids, labels, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "label"]:
            raise ValueError(f"{path}: feature file must start with id,label")
        width = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 2:
                raise ValueError(f"{path}:{lineno}: expected {width} features, got {len(row) - 2}")
            ids.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=np.float64).reshape(len(ids), -1)


def layout_dict(layout) -> Dict[str, Tuple[int, int]]:
    return {name: (off, n) for name, off, n in layout}
