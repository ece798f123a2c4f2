"""Forward and backward passes for the layer kinds DFUNet is built from.

All functions take and return float64 arrays; activations are N x C x H x W.
Backward functions return exact gradients of the matching forward map and
never mutate their arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import DTYPE, ShapeError


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError(f"invalid conv geometry {self}")

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv {self.kernel}x{self.kernel} does not fit a {h}x{w} input")
        return ho, wo

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


@dataclass(frozen=True)
class PoolSpec:
    mode: str = "max"
    kernel: int = 3
    stride: int = 2
    rounding: str = "ceil"

    def __post_init__(self):
        if self.mode not in ("max", "average"):
            raise ValueError(f"unknown pooling mode {self.mode!r}")
        if self.rounding not in ("ceil", "floor"):
            raise ValueError(f"unknown rounding {self.rounding!r}")
        if self.kernel < 1 or self.stride < 1:
            raise ValueError(f"invalid pool geometry {self}")

    def output_extent(self, n: int) -> int:
        if self.rounding == "floor":
            if n < self.kernel:
                raise ShapeError(f"pool kernel {self.kernel} larger than input extent {n}")
            return (n - self.kernel) // self.stride + 1
        out = math.ceil((n - self.kernel) / self.stride) + 1
        if out < 1:
            raise ShapeError(f"pool kernel {self.kernel} leaves no output for extent {n}")
        return out

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        return self.output_extent(h), self.output_extent(w)


@dataclass(frozen=True)
class LrnParams:
    n: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError("LRN neighbourhood must be a positive odd count")
        if self.k <= 0 or self.alpha < 0 or self.beta <= 0:
            raise ValueError(f"invalid LRN parameters {self}")


@dataclass(frozen=True)
class FcSpec:
    in_units: int
    out_units: int

    @property
    def weight_shape(self) -> Tuple[int, int]:
        return (self.out_units, self.in_units)


@dataclass(frozen=True)
class ParallelConvSpec:
    """1x1, 3x3 and 5x5 branches at stride 1, padded to keep the spatial size."""

    in_channels: int
    widths: Tuple[int, int, int]

    def branches(self) -> List[ConvSpec]:
        return [
            ConvSpec(self.in_channels, c, k, 1, (k - 1) // 2)
            for c, k in zip(self.widths, (1, 3, 5))
        ]

    @property
    def out_channels(self) -> int:
        return sum(self.widths)


# -- convolution ------------------------------------------------------------

def _check_input(x: np.ndarray, channels: int, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects N x C x H x W input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"{what} expects {channels} channels, got {x.shape[1]}")


def _im2col(x: np.ndarray, spec: ConvSpec) -> Tuple[np.ndarray, int, int]:
    # columns laid out as (C*k*k, N*Ho*Wo) so one GEMM covers the batch
    n, c, h, w = x.shape
    k, s, p = spec.kernel, spec.stride, spec.pad
    ho, wo = spec.output_hw(h, w)
    xt = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    if p:
        xt = np.pad(xt, ((0, 0), (0, 0), (p, p), (p, p)))
    if k == 1 and s == 1:
        return xt.reshape(c, n * ho * wo), ho, wo
    cols = np.empty((c, k, k, n, ho, wo), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return cols.reshape(c * k * k, n * ho * wo), ho, wo


def _col2im(cols: np.ndarray, x_shape, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    k, s, p = spec.kernel, spec.stride, spec.pad
    cols = cols.reshape(c, k, k, n, ho, wo)
    gt = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            gt[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, i, j]
    if p:
        gt = gt[:, :, p:p + h, p:p + w]
    return np.ascontiguousarray(gt.transpose(1, 0, 2, 3))


def conv2d_forward(x, spec: ConvSpec, weights, bias, return_cols: bool = False):
    """Zero-padded cross-correlation. Returns ``y`` (and the im2col buffer if
    ``return_cols``, which ``conv2d_backward`` can reuse)."""
    x = np.asarray(x, dtype=DTYPE)
    _check_input(x, spec.in_channels, "conv2d")
    weights = np.asarray(weights, dtype=DTYPE)
    if weights.shape != spec.weight_shape:
        raise ShapeError(f"conv weights {weights.shape} do not match {spec.weight_shape}")
    bias = np.asarray(bias, dtype=DTYPE).reshape(-1)
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv bias must have {spec.out_channels} entries")
    cols, ho, wo = _im2col(x, spec)
    out = weights.reshape(spec.out_channels, -1) @ cols
    out += bias[:, None]
    y = np.ascontiguousarray(out.reshape(spec.out_channels, x.shape[0], ho, wo).transpose(1, 0, 2, 3))
    if return_cols:
        return y, cols
    return y


def conv2d_backward(x, spec: ConvSpec, weights, grad_out, cols: Optional[np.ndarray] = None):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    x = np.asarray(x, dtype=DTYPE)
    _check_input(x, spec.in_channels, "conv2d")
    weights = np.asarray(weights, dtype=DTYPE)
    ho, wo = spec.output_hw(x.shape[2], x.shape[3])
    expected = (x.shape[0], spec.out_channels, ho, wo)
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expected}")
    if cols is None:
        cols, _, _ = _im2col(x, spec)
    g = grad_out.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)
    grad_w = (g @ cols.T).reshape(spec.weight_shape)
    grad_b = g.sum(axis=1)
    grad_cols = weights.reshape(spec.out_channels, -1).T @ g
    grad_x = _col2im(grad_cols, x.shape, spec, ho, wo)
    return grad_x, grad_w, grad_b


# -- pooling ----------------------------------------------------------------

def pool_forward(x, spec: PoolSpec):
    """Returns ``(y, index_map)``; ``index_map`` holds flat ``h*W + w`` argmax
    positions for max pooling and is ``None`` for average pooling."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeError(f"pool expects N x C x H x W input, got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    k, s = spec.kernel, spec.stride
    hp = max((ho - 1) * s + k, h)
    wp = max((wo - 1) * s + k, w)
    if spec.mode == "max":
        xp = np.full((n, c, hp, wp), -np.inf, dtype=DTYPE)
        xp[:, :, :h, :w] = x
        best = np.full((n, c, ho, wo), -np.inf, dtype=DTYPE)
        arg = np.zeros((n, c, ho, wo), dtype=np.int64)
        rows = np.arange(ho) * s
        colv = np.arange(wo) * s
        for i in range(k):
            for j in range(k):
                cand = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
                better = cand > best
                best = np.where(better, cand, best)
                flat = (rows[:, None] + i) * w + (colv[None, :] + j)
                arg = np.where(better, flat, arg)
        return best, arg
    xp = np.zeros((n, c, hp, wp), dtype=DTYPE)
    xp[:, :, :h, :w] = x
    total = np.zeros((n, c, ho, wo), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            total += xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return total / _window_counts(h, w, ho, wo, spec), None


def _window_counts(h, w, ho, wo, spec: PoolSpec) -> np.ndarray:
    r0 = np.arange(ho) * spec.stride
    c0 = np.arange(wo) * spec.stride
    rh = np.minimum(r0 + spec.kernel, h) - r0
    cw = np.minimum(c0 + spec.kernel, w) - c0
    return (rh[:, None] * cw[None, :]).astype(DTYPE)


def pool_backward(x, spec: PoolSpec, index_map, grad_out) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    n, c, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != (n, c, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, c, ho, wo)}")
    if spec.mode == "max":
        if index_map is None or np.shape(index_map) != grad_out.shape:
            raise ValueError("max pooling backward needs the index map from the matching forward call")
        grad = np.zeros((n * c, h * w), dtype=DTYPE)
        rows = np.repeat(np.arange(n * c), ho * wo)
        np.add.at(grad, (rows, np.asarray(index_map).reshape(-1)), grad_out.reshape(-1))
        return grad.reshape(n, c, h, w)
    k, s = spec.kernel, spec.stride
    hp = max((ho - 1) * s + k, h)
    wp = max((wo - 1) * s + k, w)
    share = grad_out / _window_counts(h, w, ho, wo, spec)
    gp = np.zeros((n, c, hp, wp), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            gp[:, :, i:i + s * ho:s, j:j + s * wo:s] += share
    return gp[:, :, :h, :w].copy()


# -- pointwise and normalisation --------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return np.where(x > 0, np.asarray(grad_out, dtype=DTYPE), 0.0)


def _channel_window_sum(a: np.ndarray, half: int) -> np.ndarray:
    c = a.shape[1]
    padded = np.zeros((a.shape[0], c + 2 * half + 1) + a.shape[2:], dtype=DTYPE)
    np.cumsum(a, axis=1, out=padded[:, half + 1:half + 1 + c])
    padded[:, half + 1 + c:] = padded[:, half + c:half + c + 1]
    return padded[:, 2 * half + 1:] - padded[:, :c]


def _lrn_scale(x: np.ndarray, p: LrnParams) -> np.ndarray:
    return p.k + p.alpha * _channel_window_sum(x * x, p.n // 2)


def lrn_forward(x, p: LrnParams) -> np.ndarray:
    """Cross-channel LRN: ``b_i = a_i / (k + alpha * sum_j a_j^2) ** beta`` with
    ``j`` over channels ``max(0, i - n//2) .. min(C-1, i + n//2)``."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeError(f"LRN expects N x C x H x W input, got {x.shape}")
    return x * _lrn_scale(x, p) ** (-p.beta)


def lrn_backward(x, p: LrnParams, grad_out) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    g = np.asarray(grad_out, dtype=DTYPE)
    scale = _lrn_scale(x, p)
    inv = scale ** (-p.beta)
    # the channel window is symmetric, so the cross term is another window sum
    cross = _channel_window_sum(g * x * inv / scale, p.n // 2)
    return g * inv - 2.0 * p.alpha * p.beta * x * cross


def global_pool_forward(x, mode: str = "average"):
    """Reduce every channel map to one value. Returns ``(y N x C x 1 x 1,
    flat argmax per map or None)``; works for any H x W, square or not."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeError(f"global pooling expects N x C x H x W input, got {x.shape}")
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    if mode == "average":
        return flat.mean(axis=2)[:, :, None, None], None
    if mode == "max":
        idx = flat.argmax(axis=2)
        return np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, :, None], idx
    raise ValueError(f"unknown pooling mode {mode!r}")


def global_pool_backward(x, mode: str, index_map, grad_out) -> np.ndarray:
    n, c, h, w = np.shape(x)
    g = np.asarray(grad_out, dtype=DTYPE).reshape(n, c, 1)
    if mode == "average":
        return np.broadcast_to(g / (h * w), (n, c, h * w)).reshape(n, c, h, w).copy()
    if index_map is None:
        raise ValueError("max pooling backward needs the index map from forward")
    out = np.zeros((n, c, h * w), dtype=DTYPE)
    np.put_along_axis(out, index_map[:, :, None], g, axis=2)
    return out.reshape(n, c, h, w)


# -- concatenation ----------------------------------------------------------

def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ValueError("nothing to concatenate")
    ref = parts[0].shape
    for part in parts[1:]:
        if part.ndim != 4 or part.shape[0] != ref[0] or part.shape[2:] != ref[2:]:
            raise ShapeError(f"cannot concatenate {part.shape} with {ref} along channels")
    return np.concatenate([np.asarray(p, dtype=DTYPE) for p in parts], axis=1)


def concat_channels_backward(grad_out, channel_counts: Sequence[int]) -> List[np.ndarray]:
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if sum(channel_counts) != grad_out.shape[1]:
        raise ShapeError("channel counts do not add up to the gradient's channels")
    bounds = np.cumsum(channel_counts)[:-1]
    return [part.copy() for part in np.split(grad_out, bounds, axis=1)]


def parallel_conv_forward(x, spec: ParallelConvSpec, weights, biases):
    """Three conv+ReLU branches on the same input, concatenated in 1x1, 3x3,
    5x5 order. Returns ``(y, cache)``."""
    pre, cols = [], []
    for branch, w, b in zip(spec.branches(), weights, biases):
        z, col = conv2d_forward(x, branch, w, b, return_cols=True)
        pre.append(z)
        cols.append(col)
    return concat_channels([relu(z) for z in pre]), (pre, cols)


def parallel_conv_backward(x, spec: ParallelConvSpec, weights, cache, grad_out):
    """Returns ``(grad_x, [grad_w...], [grad_b...])``."""
    pre, cols = cache
    grad_x = np.zeros_like(np.asarray(x, dtype=DTYPE))
    grad_ws, grad_bs = [], []
    slices = concat_channels_backward(grad_out, list(spec.widths))
    for branch, w, z, col, g in zip(spec.branches(), weights, pre, cols, slices):
        gx, gw, gb = conv2d_backward(x, branch, w, relu_backward(z, g), cols=col)
        grad_x += gx
        grad_ws.append(gw)
        grad_bs.append(gb)
    return grad_x, grad_ws, grad_bs


# -- classifier head --------------------------------------------------------

def fully_connected(x, weights, bias) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    weights = np.asarray(weights, dtype=DTYPE)
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"FC expects {weights.shape[1]} inputs, got {x.shape[-1]}")
    return x @ weights.T + np.asarray(bias, dtype=DTYPE)


def fully_connected_backward(x, weights, grad_out):
    """Returns ``(grad_x, grad_w, grad_b)`` for a vector or a batch of rows."""
    x = np.asarray(x, dtype=DTYPE)
    g = np.asarray(grad_out, dtype=DTYPE)
    weights = np.asarray(weights, dtype=DTYPE)
    grad_x = g @ weights
    if x.ndim == 1:
        return grad_x, np.outer(g, x), g.copy()
    return grad_x, g.T @ x, g.sum(axis=0)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(z, label):
    """Returns ``(probabilities, loss, grad_z)``.

    For a batch of logits (N x K) with N labels the loss and gradient are
    averaged over the batch.
    """
    z = np.asarray(z, dtype=DTYPE)
    k = z.shape[-1]
    if k < 2:
        raise ValueError("softmax needs at least two classes")
    labels = np.atleast_1d(np.asarray(label))
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range [0, {k})")
    p = softmax(z)
    if z.ndim == 1:
        lab = int(labels[0])
        shifted = z - z.max()
        loss = float(np.log(np.exp(shifted).sum()) - shifted[lab])
        grad = p.copy()
        grad[lab] -= 1.0
        return p, loss, grad
    n = z.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {n}")
    shifted = z - z.max(axis=1, keepdims=True)
    rows = np.arange(n)
    losses = np.log(np.exp(shifted).sum(axis=1)) - shifted[rows, labels]
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return p, float(losses.mean()), grad / n
