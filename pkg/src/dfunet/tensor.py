"""Dense float64 arrays used as activations, weights and gradients.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order
(N x C x H x W for activations). The helpers here add the shape checks the
layers rely on; they never modify their inputs.
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Sequence, Union

import numpy as np

DTYPE = np.float64

Scalar = Union[int, float]


class ShapeError(ValueError):
    """Raised when tensor extents do not conform."""


def tensor_new(shape: Sequence[int], fill: Union[Scalar, Sequence[float], np.ndarray] = 0.0) -> np.ndarray:
    """Create a float64 tensor of ``shape``.

    ``fill`` is either a scalar replicated everywhere or a flat sequence of
    exactly ``prod(shape)`` values in row-major order.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("shape must have at least one extent")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if isinstance(fill, Real):
        return np.full(shape, float(fill), dtype=DTYPE)
    values = np.asarray(fill, dtype=DTYPE).ravel()
    if values.size != int(np.prod(shape)):
        raise ShapeError(f"{values.size} values cannot fill shape {shape}")
    return values.reshape(shape).copy()


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


_BINARY: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Pointwise ``add``/``sub``/``mul`` of equal shapes, ``scale`` by a scalar,
    or ``map`` of a unary callable passed as ``b``."""
    a = np.asarray(a, dtype=DTYPE)
    if op in _BINARY:
        if np.isscalar(b):
            raise ShapeError(f"{op} needs a tensor operand; use 'scale' for scalars")
        b = np.asarray(b, dtype=DTYPE)
        if a.shape != b.shape:
            raise ShapeError(f"shape mismatch for {op}: {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    if op == "scale":
        if not np.isscalar(b):
            raise ShapeError("scale needs a scalar operand")
        return a * float(b)
    if op == "map":
        out = np.asarray(np.vectorize(b, otypes=[DTYPE])(a), dtype=DTYPE)
        return out.reshape(a.shape)
    raise ValueError(f"unknown elementwise op {op!r}")
