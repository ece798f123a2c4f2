"""Confusion-matrix rates, MCC, ROC curves and AUC with Hanley-McNeil error."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

Z95 = 1.96

METRIC_KEYS = ("sensitivity", "specificity", "precision", "accuracy", "f_measure",
               "mcc", "auc", "auc_se", "auc_ci_low", "auc_ci_high")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred, positive=1) -> "ConfusionCounts":
        t = np.asarray(y_true) == positive
        p = np.asarray(y_pred) == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


def _ratio(num: float, den: float) -> Optional[float]:
    # undefined rates stay None rather than being coerced to 0 or 1
    return num / den if den else None


def binary_report(c: ConfusionCounts) -> Dict[str, Optional[float]]:
    if c.total == 0:
        raise ValueError("all confusion counts are zero")
    return {
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.fp + c.tn),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "f_measure": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    }


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return m


def mcc(c) -> float:
    """Matthews correlation for ``ConfusionCounts`` or a K x K matrix
    (rows true, columns predicted). A zero denominator gives 0."""
    if isinstance(c, ConfusionCounts):
        if c.total == 0:
            raise ValueError("all confusion counts are zero")
        den = math.sqrt((c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn))
        return (c.tp * c.tn - c.fp * c.fn) / den if den else 0.0
    m = np.asarray(c, dtype=np.float64)
    s = m.sum()
    if m.ndim != 2 or m.shape[0] != m.shape[1] or s == 0:
        raise ValueError("need a non-empty square confusion matrix")
    t = m.sum(axis=1)
    p = m.sum(axis=0)
    correct = np.trace(m)
    den = math.sqrt((s * s - p @ p) * (s * s - t @ t))
    return float((correct * s - t @ p) / den) if den else 0.0


def multiclass_report(matrix) -> Dict[str, Optional[float]]:
    """One-vs-rest rates macro-averaged over classes; accuracy is
    trace/total and MCC uses the K-class correlation form."""
    m = np.asarray(matrix, dtype=np.int64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise ValueError("need a K x K matrix with K >= 2")
    total = int(m.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    per_class = []
    for i in range(m.shape[0]):
        tp = int(m[i, i])
        fn = int(m[i].sum()) - tp
        fp = int(m[:, i].sum()) - tp
        per_class.append(binary_report(ConfusionCounts(tp, total - tp - fn - fp, fp, fn)))
    out: Dict[str, Optional[float]] = {}
    for key in ("sensitivity", "specificity", "precision", "f_measure"):
        vals = [r[key] for r in per_class]
        out[key] = None if any(v is None for v in vals) else float(np.mean(vals))
    out["accuracy"] = np.trace(m) / total
    out["mcc"] = mcc(m)
    return out


# -- ROC / AUC ------------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    #: integer counts behind the rates, kept for exact integration
    fp_counts: np.ndarray
    tp_counts: np.ndarray

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("threshold,fpr,tpr\n")
        for t, f, p in zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()):
            buf.write(f"{t!r},{f!r},{p!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class AucReport:
    auc: float
    se: float
    ci95: Tuple[float, float]


def _check_binary(labels, scores):
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("one score per label is required")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if labels.all() or not labels.any():
        raise ValueError("ROC analysis needs both classes")
    return labels, scores


def roc_curve(labels, scores) -> RocCurve:
    """Sweep thresholds over the distinct scores, highest first; tied scores
    form one vertex. The curve opens with (0, 0) at threshold +inf and closes
    with (1, 1) at the lowest score, where every sample is called positive."""
    labels, scores = _check_binary(labels, scores)
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(lab)[last_of_group]
    fp = np.cumsum(~lab)[last_of_group]
    thresholds = np.r_[np.inf, s[last_of_group]]
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    return RocCurve(thresholds, fp / n_neg, tp / n_pos, fp, tp)


def auc_from_curve(curve: RocCurve) -> float:
    """Trapezoidal area, integrated on integer counts then scaled once."""
    fp, tp = curve.fp_counts, curve.tp_counts
    twice_area = np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))
    return float(twice_area) / (2.0 * fp[-1] * tp[-1])


def hanley_mcneil_se(a: float, n_pos: int, n_neg: int) -> float:
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return math.sqrt(max(var, 0.0))


def confidence_interval(a: float, se: float, z: float = Z95) -> Tuple[float, float]:
    return float(max(0.0, a - z * se)), float(min(1.0, a + z * se))


def auc(labels, scores) -> AucReport:
    labels, scores = _check_binary(labels, scores)
    a = auc_from_curve(roc_curve(labels, scores))
    se = hanley_mcneil_se(a, int(labels.sum()), int((~labels).sum()))
    return AucReport(float(a), float(se), confidence_interval(a, se))


# -- reports ------------------------------------------------------------------

def evaluate_scores(labels, scores, threshold: float = 0.5, positive: int = 1) -> Dict[str, Optional[float]]:
    """Full metrics dictionary (``METRIC_KEYS``) for binary scores; a sample is
    predicted positive when its score is >= ``threshold``."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    is_pos = labels == positive
    pred = scores >= threshold
    counts = ConfusionCounts.from_labels(is_pos, pred, positive=True)
    out = dict(binary_report(counts))
    out["mcc"] = mcc(counts)
    rep = auc(is_pos, scores)
    out.update(auc=rep.auc, auc_se=rep.se, auc_ci_low=rep.ci95[0], auc_ci_high=rep.ci95[1])
    return {k: out[k] for k in METRIC_KEYS}


def metrics_json(metrics: Dict[str, Optional[float]]) -> str:
    return json.dumps({k: metrics.get(k) for k in METRIC_KEYS}, indent=1)


def write_scores(path, ids: Sequence[str], labels: Sequence[int], scores: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "score"])
        for i, lab, sc in zip(ids, labels, scores):
            w.writerow([i, int(lab), repr(float(sc))])


def read_scores(path):
    """Returns ``(ids, labels, scores)`` from an ``id,label,score`` CSV."""
    ids, labels, scores = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["id", "label", "score"]:
            raise ValueError(f"{path}: scores file must have header id,label,score")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            ids.append(row[0])
            labels.append(int(row[1]))
            scores.append(float(row[2]))
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(scores, dtype=np.float64)


def roc_svg(curves: Dict[str, RocCurve], size: int = 400) -> str:
    """ROC curves as SVG polylines on a unit box, one path per model."""
    margin = 50
    box = size - 2 * margin
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{box}" height="{box}" fill="none" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin + box}" x2="{margin + box}" y2="{margin}" stroke="#bbb" stroke-dasharray="4 4"/>',
        f'<text x="{size / 2}" y="{size - 12}" text-anchor="middle" font-size="14">False positive rate</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 14 {size / 2})">True positive rate</text>',
    ]
    for i, (name, curve) in enumerate(curves.items()):
        pts = " ".join(f"{margin + f * box:.2f},{margin + (1 - t) * box:.2f}" for f, t in curve.points)
        color = palette[i % len(palette)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"><title>{name}</title></polyline>')
        parts.append(f'<text x="{margin + box - 5}" y="{margin + box - 10 - 16 * i}" text-anchor="end" '
                     f'font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
