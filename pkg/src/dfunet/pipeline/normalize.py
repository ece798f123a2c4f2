"""Per-pixel zero-centring and scaling fitted on training patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPSILON = 1e-8


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = EPSILON


def fit_normalizer(patches, epsilon: float = EPSILON) -> Normalizer:
    """Mean and population standard deviation at every pixel-channel position."""
    arr = np.asarray(patches, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[0] == 0:
        raise ValueError("need a non-empty stack of equally shaped patches")
    return Normalizer(arr.mean(axis=0), arr.std(axis=0), epsilon)


def apply_normalizer(norm: Normalizer, patch) -> np.ndarray:
    """``(x - mean) / (std + eps)``; accepts one patch or a stack of them."""
    x = np.asarray(patch, dtype=np.float64)
    if x.shape[-norm.mean.ndim:] != norm.mean.shape:
        raise ValueError(f"patch shape {x.shape} does not match the fitted shape {norm.mean.shape}")
    return (x - norm.mean) / (norm.std + norm.epsilon)
