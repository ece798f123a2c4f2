"""Binary soft-margin SVM trained with Platt's sequential minimal optimisation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf kernel needs gamma > 0")

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        dots = A @ B.T
        if self.kind == "linear":
            return dots
        sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * dots
        return np.exp(-self.gamma * np.maximum(sq, 0.0))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    #: alpha_i * y_i for each stored support vector
    dual_coef: np.ndarray
    bias: float
    kernel: KernelSpec
    C: float
    scaler: Optional[Standardizer] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        self.dual_coef = np.asarray(self.dual_coef, dtype=np.float64).reshape(-1)
        if self.dual_coef.size == 0:
            raise ValueError("an SVM model needs at least one support vector")
        if len(self.dual_coef) != len(self.support_vectors):
            raise ValueError("one dual coefficient per support vector is required")
        alpha = np.abs(self.dual_coef)
        if np.any(alpha <= 0) or np.any(alpha > self.C * (1 + 1e-12)):
            raise ValueError("support-vector multipliers must lie in (0, C]")

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    def to_json(self) -> str:
        doc = {
            "kernel": {"kind": self.kernel.kind, "gamma": self.kernel.gamma},
            "C": self.C,
            "scaler": None if self.scaler is None else {
                "mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()},
            "b": self.bias,
            "dual_coef": self.dual_coef.tolist(),
            "support_vectors": self.support_vectors.tolist(),
            "meta": self.meta,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        d = json.loads(text)
        scaler = None
        if d.get("scaler"):
            scaler = Standardizer(np.asarray(d["scaler"]["mean"]), np.asarray(d["scaler"]["std"]))
        return cls(np.asarray(d["support_vectors"]), np.asarray(d["dual_coef"]), float(d["b"]),
                   KernelSpec(d["kernel"]["kind"], float(d["kernel"].get("gamma", 1.0))),
                   float(d["C"]), scaler, d.get("meta", {}))

    def save(self, path) -> None:
        with open(os.fspath(path), "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(os.fspath(path)) as fh:
            return cls.from_json(fh.read())


def dual_objective(alpha, y, K) -> float:
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


class _Smo:
    """State of one SMO run (Platt 1998, with a full error vector)."""

    def __init__(self, K, y, C, tol, eps):
        self.K, self.y, self.C, self.tol, self.eps = K, y, C, tol, eps
        self.n = len(y)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -y.astype(np.float64)  # f(x_i) - y_i with f = 0
        self.steps = 0
        #: multipliers this close to a bound are treated as sitting on it
        self.snap = 1e-10 * C

    def _to_bound(self, a: float) -> float:
        if a < self.snap:
            return 0.0
        if a > self.C - self.snap:
            return self.C
        return a

    def _non_bound(self):
        return np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        K, y, C, eps = self.K, self.y, self.C, self.eps
        a1_old, a2_old = self.alpha[i1], self.alpha[i2]
        y1, y2 = y[i1], y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if s < 0:
            lo, hi = max(0.0, a2_old - a1_old), min(C, C + a2_old - a1_old)
        else:
            lo, hi = max(0.0, a1_old + a2_old - C), min(C, a1_old + a2_old)
        if lo >= hi:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2 = min(max(a2_old + y2 * (E1 - E2) / eta, lo), hi)
        else:
            # objective along the constraint line, evaluated at both ends
            f1 = y1 * (E1 - self.b) - a1_old * k11 - s * a2_old * k12
            f2 = y2 * (E2 - self.b) - s * a1_old * k12 - a2_old * k22
            L1 = a1_old + s * (a2_old - lo)
            H1 = a1_old + s * (a2_old - hi)
            obj_lo = L1 * f1 + lo * f2 + 0.5 * L1 * L1 * k11 + 0.5 * lo * lo * k22 + s * lo * L1 * k12
            obj_hi = H1 * f1 + hi * f2 + 0.5 * H1 * H1 * k11 + 0.5 * hi * hi * k22 + s * hi * H1 * k12
            if obj_lo < obj_hi - eps:
                a2 = lo
            elif obj_lo > obj_hi + eps:
                a2 = hi
            else:
                a2 = a2_old
        a2 = self._to_bound(a2)
        if abs(a2 - a2_old) < eps * (a2 + a2_old + eps):
            return False
        a1 = a1_old + s * (a2_old - a2)
        snapped = self._to_bound(min(max(a1, 0.0), C))
        a2 += s * (a1 - snapped)
        a1 = snapped
        d1, d2 = y1 * (a1 - a1_old), y2 * (a2 - a2_old)
        b1 = self.b - E1 - d1 * k11 - d2 * k12
        b2 = self.b - E2 - d1 * k12 - d2 * k22
        if 0 < a1 < C:
            b_new = b1
        elif 0 < a2 < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.E += d1 * K[i1] + d2 * K[i2] + (b_new - self.b)
        self.b = b_new
        self.alpha[i1], self.alpha[i2] = a1, a2
        self.steps += 1
        return True

    def violates(self, i: int) -> bool:
        r = self.E[i] * self.y[i]
        return (r < -self.tol and self.alpha[i] < self.C) or (r > self.tol and self.alpha[i] > 0)

    def examine(self, i2: int) -> bool:
        if not self.violates(i2):
            return False
        nb = self._non_bound()
        if len(nb) > 1:
            i1 = int(nb[np.argmax(np.abs(self.E[nb] - self.E[i2]))])
            if self.take_step(i1, i2):
                return True
        # fallback sweeps start just after i2 so the order is deterministic
        for pool in (nb, np.arange(self.n)):
            if len(pool) == 0:
                continue
            start = int(np.searchsorted(pool, i2, side="right")) % len(pool)
            for i1 in np.roll(pool, -start):
                if self.take_step(int(i1), i2):
                    return True
        return False

    def max_violation(self) -> float:
        r = self.E * self.y
        up = np.where(self.alpha < self.C, np.maximum(-r, 0.0), 0.0)
        down = np.where(self.alpha > 0, np.maximum(r, 0.0), 0.0)
        return float(max(up.max(), down.max()))


def canonical_bias(alpha, y, K, C) -> float:
    """Bias from the margin conditions: the mean over free multipliers, or
    the midpoint of the feasible interval when every multiplier is at a bound."""
    g = K @ (alpha * y)
    resid = y - g
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(resid[free].mean())
    lower = ((alpha <= 0) & (y > 0)) | ((alpha >= C) & (y < 0))
    upper = ((alpha <= 0) & (y < 0)) | ((alpha >= C) & (y > 0))
    lo = resid[lower].max() if lower.any() else None
    hi = resid[upper].min() if upper.any() else None
    if lo is None:
        return float(hi)
    if hi is None:
        return float(lo)
    return float(0.5 * (lo + hi))


def smo_train(X, y, C: float = 1.0, kernel: KernelSpec = KernelSpec(), tol: float = 1e-3,
              max_passes: int = 100, eps: Optional[float] = None) -> SvmModel:
    """Solve the soft-margin dual with two-multiplier analytic updates.

    ``y`` holds labels in {-1, +1}. Stops when a full sweep changes nothing or
    after ``max_passes`` full sweeps.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} rows but {len(y)} labels")
    if not C > 0:
        raise ValueError("C must be positive")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    K = kernel(X, X)
    run = _Smo(K, y, float(C), tol, 1e-12 if eps is None else eps)
    examine_all = True
    full_sweeps = 0
    sweeps = 0
    while full_sweeps < max_passes and sweeps < 100 * max_passes:
        changed = 0
        if examine_all:
            full_sweeps += 1
            candidates = range(run.n)
        else:
            candidates = run._non_bound().tolist()
        for i in candidates:
            changed += run.examine(int(i))
        sweeps += 1
        if examine_all:
            if changed == 0:
                break
            examine_all = False
        elif changed == 0:
            examine_all = True
    alpha = run.alpha
    bias = canonical_bias(alpha, y, K, float(C))
    sv = alpha > 0
    meta = {"iterations": run.steps, "full_sweeps": full_sweeps,
            "kkt_violation": run.max_violation(), "dual_objective": dual_objective(alpha, y, K)}
    return SvmModel(X[sv], alpha[sv] * y[sv], bias, kernel, float(C), None, meta)


def svm_decision(model: SvmModel, X) -> np.ndarray:
    """``f(x) = sum_i alpha_i y_i K(x_i, x) + b`` for each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {X.shape[1]}")
    if model.scaler is not None:
        X = model.scaler.transform(X)
    return model.kernel(X, model.support_vectors) @ model.dual_coef + model.bias


def svm_predict(model: SvmModel, X) -> np.ndarray:
    """Labels in {-1, +1}; ``f = 0`` maps to +1."""
    return np.where(svm_decision(model, X) >= 0, 1, -1)


def alphas_from_model(model: SvmModel, X, y) -> Tuple[np.ndarray, np.ndarray]:
    """Recover the full multiplier vector for the training rows ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    alpha = np.zeros(len(X))
    for sv, coef in zip(model.support_vectors, model.dual_coef):
        # duplicated rows each keep their own multiplier: take the first unused match
        match = np.flatnonzero(np.all(X == sv, axis=1) & (np.sign(coef) == np.asarray(y)) & (alpha == 0))
        alpha[match[0]] = abs(coef)
    return alpha, np.asarray(y, dtype=np.float64)
