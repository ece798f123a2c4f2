"""Dataset manifests and source-grouped fold plans.

On disk a dataset is ``root/<class-name>/<source_id>__<patch-id>.ppm``; a
manifest is a CSV with header ``path,label,source_id``; a fold plan is JSON
mapping fold index to ``{"train": [...], "val": [...], "test": [...]}``
lists of source ids.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .image import ImageBuffer, load_ppm

MANIFEST_HEADER = ["path", "label", "source_id"]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    source_id: str

    @property
    def patch_id(self) -> str:
        stem = Path(self.path).stem
        return stem.split("__", 1)[1] if "__" in stem else stem


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    class_names: List[str] = field(default_factory=list)
    root: Optional[Path] = None

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        if not self.class_names:
            top = max((e.label for e in self.entries), default=1)
            self.class_names = [str(i) for i in range(max(top + 1, 2))]
        for e in self.entries:
            if not 0 <= e.label < len(self.class_names):
                raise ValueError(f"label {e.label} of {e.path} is out of range")
            if not e.source_id:
                raise ValueError(f"{e.path} has an empty source_id")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load_image(self, entry: ManifestEntry) -> ImageBuffer:
        return load_ppm(self.resolve(entry))

    def source_ids(self) -> List[str]:
        return sorted({e.source_id for e in self.entries})

    def select(self, ids) -> List[ManifestEntry]:
        """Entries whose source id (or, for per-patch plans, path) is in ``ids``."""
        wanted = set(ids)
        return [e for e in self.entries if e.source_id in wanted or e.path in wanted]

    def write_csv(self, path) -> None:
        with open(os.fspath(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MANIFEST_HEADER)
            for e in self.entries:
                w.writerow([e.path, e.label, e.source_id])


def read_manifest(path, class_names: Optional[Sequence[str]] = None) -> DatasetManifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                label = int(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
            entries.append(ManifestEntry(row[0], label, row[2]))
    return DatasetManifest(entries, list(class_names or []), path.parent)


def scan_dataset(root, class_names: Optional[Sequence[str]] = None) -> DatasetManifest:
    """Build a manifest from the directory layout. Class order is
    ``class_names`` if given, else the sorted subdirectory names."""
    root = Path(root)
    names = list(class_names) if class_names else sorted(p.name for p in root.iterdir() if p.is_dir())
    entries = []
    for label, name in enumerate(names):
        for f in sorted((root / name).glob("*.ppm")):
            source = f.stem.split("__", 1)[0]
            entries.append(ManifestEntry(f"{name}/{f.name}", label, source))
    return DatasetManifest(entries, names, root)


# -- fold plans ---------------------------------------------------------------

@dataclass
class FoldPlan:
    folds: List[Dict[str, List[str]]]

    def to_json(self) -> str:
        return json.dumps({str(i): f for i, f in enumerate(self.folds)}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        raw = json.loads(text)
        folds = []
        for i in range(len(raw)):
            f = raw[str(i)]
            folds.append({k: list(f[k]) for k in ("train", "val", "test")})
        return cls(folds)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FoldPlan":
        return cls.from_json(Path(path).read_text())

    def fold(self, k: int) -> Dict[str, List[str]]:
        if not 0 <= k < len(self.folds):
            raise IndexError(f"fold {k} out of range [0, {len(self.folds)})")
        return self.folds[k]


def largest_remainder(total: int, fractions: Sequence[float]) -> List[int]:
    quotas = [total * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:total - sum(counts)]:
        counts[i] += 1
    return counts


def _take_run(items: List[str], count: int):
    """Split off the first ``count`` items; any run of the class-interleaved
    order holds roughly the overall label proportions."""
    return list(items[:count]), list(items[count:])


def _stratified_order(labels_by_source: Dict[str, int], rng: np.random.Generator) -> List[str]:
    # shuffle within each class, then interleave classes by relative rank
    by_class: Dict[int, List[str]] = {}
    for sid in sorted(labels_by_source):
        by_class.setdefault(labels_by_source[sid], []).append(sid)
    keyed = []
    for label in sorted(by_class):
        members = by_class[label]
        perm = rng.permutation(len(members))
        for rank, j in enumerate(perm):
            keyed.append(((rank + 0.5) / len(members), label, members[j]))
    return [sid for _, _, sid in sorted(keyed)]


def make_folds(manifest: DatasetManifest, k: int = 10, holdout: str = "kfold", seed: int = 0,
               per_patch: bool = False) -> FoldPlan:
    """Assign whole source photographs to train/val/test.

    ``kfold``: sources are cut into ``k`` near-equal stratified test groups;
    in each fold 1/19 of the remaining sources become validation.
    ``split-85-5-10``: one fold with largest-remainder 85/5/10 counts.
    ``per_patch`` treats every patch as its own source.
    """
    labels: Dict[str, List[int]] = {}
    for e in manifest.entries:
        key = e.path if per_patch else e.source_id
        labels.setdefault(key, []).append(e.label)
    majority = {sid: int(np.bincount(v).argmax()) for sid, v in labels.items()}
    order = _stratified_order(majority, np.random.default_rng(seed))
    n = len(order)
    folds = []
    if holdout == "kfold":
        if n < k:
            raise ValueError(f"need at least {k} distinct sources for {k}-fold, got {n}")
        # contiguous runs of the class-interleaved order keep each group stratified
        bounds = [i * n // k for i in range(k + 1)]
        groups = [order[bounds[i]:bounds[i + 1]] for i in range(k)]
        for i in range(k):
            rest = [sid for sid in order if sid not in set(groups[i])]
            val, train = _take_run(rest, int(np.floor(len(rest) / 19 + 0.5)))
            folds.append({"train": train, "val": val, "test": sorted(groups[i])})
    elif holdout == "split-85-5-10":
        if n < 3:
            raise ValueError(f"need at least 3 distinct sources, got {n}")
        n_train, n_val, n_test = largest_remainder(n, [0.85, 0.05, 0.10])
        test, rest = _take_run(order, n_test)
        val, train = _take_run(rest, n_val)
        folds.append({"train": train, "val": val, "test": sorted(test)})
    else:
        raise ValueError(f"unknown holdout scheme {holdout!r}")
    for f in folds:
        f["train"] = sorted(f["train"])
        f["val"] = sorted(f["val"])
        for part in ("train", "test"):
            present = {majority[s] for s in f[part]}
            missing = set(range(len(manifest.class_names))) - present
            if missing and f[part]:
                warnings.warn(f"{part} partition has no sources of class(es) {sorted(missing)}")
    return FoldPlan(folds)
