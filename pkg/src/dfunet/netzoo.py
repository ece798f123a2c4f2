"""Declarative network descriptions, the DFUNet/LeNet builders and the
executor that chains layer operations forward and backward."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layers as L
from .layers import ConvSpec, FcSpec, LrnParams, ParallelConvSpec, PoolSpec
from .tensor import DTYPE, ShapeError

#: widths of the four parallel blocks, 1x1/3x3/5x5 branch order
DFUNET_VARIANTS: Dict[str, Tuple[Tuple[int, int, int], ...]] = {
    "base": ((32, 64, 128),) * 4,
    "v1": ((128, 256, 512),) * 4,
    "v2": ((192, 256, 512),) * 4,
    "v3": ((128, 128, 128), (128, 128, 128), (256, 256, 256), (256, 256, 256)),
    "v4": ((192, 192, 192), (256, 256, 256), (256, 256, 256), (512, 512, 512)),
    "v5": ((256, 256, 256), (256, 256, 256), (512, 512, 512), (512, 512, 512)),
}

#: smallest square input whose last 3x3/s2 pool still sees more than one pixel
MIN_DFUNET_INPUT = 31

_PARAM_TYPES = {
    "conv": ConvSpec,
    "pool": PoolSpec,
    "lrn": LrnParams,
    "parallel": ParallelConvSpec,
    "fc": FcSpec,
}

LAYER_KINDS = ("conv", "pool", "global_pool", "lrn", "relu", "parallel", "fc")


@dataclass(frozen=True)
class LayerSpec:
    """One step of a network. ``stage`` groups steps into the numbered rows
    of an architecture table (a conv and its ReLU share a stage)."""

    kind: str
    name: str
    stage: int
    params: object = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.params is None or isinstance(self.params, str):
            params = self.params
        else:
            params = asdict(self.params)
            if "widths" in params:
                params["widths"] = list(params["widths"])
        return {"kind": self.kind, "name": self.name, "stage": self.stage, "params": params}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        params = d.get("params")
        kind = d["kind"]
        if kind in _PARAM_TYPES:
            params = dict(params)
            if "widths" in params:
                params["widths"] = tuple(params["widths"])
            params = _PARAM_TYPES[kind](**params)
        return cls(kind, d["name"], int(d["stage"]), params)

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        if self.kind == "conv":
            return {f"{self.name}.weight": self.params.weight_shape,
                    f"{self.name}.bias": (self.params.out_channels,)}
        if self.kind == "parallel":
            shapes = {}
            for b in self.params.branches():
                shapes[f"{self.name}.{b.kernel}x{b.kernel}.weight"] = b.weight_shape
                shapes[f"{self.name}.{b.kernel}x{b.kernel}.bias"] = (b.out_channels,)
            return shapes
        if self.kind == "fc":
            return {f"{self.name}.weight": self.params.weight_shape,
                    f"{self.name}.bias": (self.params.out_units,)}
        return {}

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        kind, p = self.kind, self.params
        if kind == "fc":
            units = int(np.prod(shape))
            if units != p.in_units:
                raise ShapeError(f"fc {self.name} expects {p.in_units} inputs, got {units}")
            return (p.out_units,)
        if kind in ("relu", "lrn") and (kind == "relu" or len(shape) == 3):
            return shape
        if len(shape) != 3:
            raise ShapeError(f"{self.name} expects a C x H x W input, got {shape}")
        c, h, w = shape
        if kind == "conv":
            if c != p.in_channels:
                raise ShapeError(f"conv {self.name} expects {p.in_channels} channels, got {c}")
            return (p.out_channels,) + p.output_hw(h, w)
        if kind == "parallel":
            if c != p.in_channels:
                raise ShapeError(f"block {self.name} expects {p.in_channels} channels, got {c}")
            return (p.out_channels, h, w)
        if kind == "pool":
            return (c,) + p.output_hw(h, w)
        if kind == "global_pool":
            return (c, 1, 1)
        return shape


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: Tuple[int, int, int]
    num_classes: int
    layers: Tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("a classifier needs at least two classes")
        shapes = self.shape_trace()
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(f"network ends in {shapes[-1]}, expected {self.num_classes} logits")

    def shape_trace(self) -> List[Tuple[int, ...]]:
        """Output shape of every layer (without the batch axis)."""
        shape = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}): {exc}") from None
            out.append(shape)
        return out

    def stage_shapes(self) -> Dict[int, Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        """``stage -> (input shape, output shape)``."""
        result = {}
        prev = tuple(self.input_shape)
        for layer, shape in zip(self.layers, self.shape_trace()):
            if layer.stage not in result:
                result[layer.stage] = (prev, shape)
            else:
                result[layer.stage] = (result[layer.stage][0], shape)
            prev = shape
        return result

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        for layer in self.layers:
            for name, shape in layer.param_shapes().items():
                if name in shapes:
                    raise ValueError(f"duplicate parameter name {name}")
                shapes[name] = shape
        return shapes

    def num_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            d["name"],
            tuple(int(v) for v in d["input_shape"]),
            int(d["num_classes"]),
            tuple(LayerSpec.from_dict(x) for x in d["layers"]),
        )


def build_dfunet(variant: str = "base", input_shape: Sequence[int] = (3, 224, 224), classes: int = 2,
                 fc_units: int = 100, head_pool: str = "average",
                 lrn: LrnParams = LrnParams()) -> NetworkSpec:
    """DFUNet: GoogLeNet-style stem, four parallel conv blocks, global pooling
    and two FC layers.

    ``head_pool`` selects average (default) or max pooling for stage 12;
    ``fc_units=1000`` gives the wider first FC layer.
    """
    if variant not in DFUNET_VARIANTS:
        raise ValueError(f"unknown DFUNet variant {variant!r}; choose from {sorted(DFUNET_VARIANTS)}")
    c, h, w = (int(v) for v in input_shape)
    if min(h, w) < MIN_DFUNET_INPUT:
        raise ShapeError(f"DFUNet needs H, W >= {MIN_DFUNET_INPUT}, got {h}x{w}")
    if head_pool not in ("average", "max"):
        raise ValueError(f"head_pool must be 'average' or 'max', got {head_pool!r}")
    widths = DFUNET_VARIANTS[variant]
    pool = PoolSpec("max", 3, 2, "ceil")
    seq: List[LayerSpec] = [
        LayerSpec("conv", "conv1", 1, ConvSpec(c, 64, 7, 2, 3)),
        LayerSpec("relu", "relu1", 1),
        LayerSpec("pool", "pool2", 2, pool),
        LayerSpec("conv", "conv3", 3, ConvSpec(64, 64, 1, 1, 0)),
        LayerSpec("relu", "relu3", 3),
        LayerSpec("conv", "conv4", 4, ConvSpec(64, 192, 3, 1, 1)),
        LayerSpec("relu", "relu4", 4),
        LayerSpec("pool", "pool5", 5, pool),
    ]
    channels = 192
    block_stages = (6, 8, 9, 11)
    for stage, width in zip(block_stages, widths):
        seq.append(LayerSpec("parallel", f"par{stage}", stage, ParallelConvSpec(channels, tuple(width))))
        seq.append(LayerSpec("lrn", f"lrn{stage}", stage, lrn))
        channels = sum(width)
        if stage in (6, 9):
            seq.append(LayerSpec("pool", f"pool{stage + 1}", stage + 1, pool))
    seq += [
        LayerSpec("global_pool", "pool12", 12, head_pool),
        LayerSpec("fc", "fc13", 13, FcSpec(channels, fc_units)),
        LayerSpec("relu", "relu13", 13),
        LayerSpec("fc", "fc14", 14, FcSpec(fc_units, classes)),
    ]
    return NetworkSpec(f"dfunet-{variant}", (c, h, w), classes, tuple(seq))


def build_lenet(classes: int = 2) -> NetworkSpec:
    pool = PoolSpec("max", 2, 2, "ceil")
    seq = (
        LayerSpec("conv", "conv1", 1, ConvSpec(1, 20, 5)),
        LayerSpec("pool", "pool1", 2, pool),
        LayerSpec("conv", "conv2", 3, ConvSpec(20, 50, 5)),
        LayerSpec("pool", "pool2", 4, pool),
        LayerSpec("fc", "ip1", 5, FcSpec(50 * 4 * 4, 500)),
        LayerSpec("relu", "relu1", 5),
        LayerSpec("fc", "ip2", 6, FcSpec(500, classes)),
    )
    return NetworkSpec("lenet", (1, 28, 28), classes, seq)


def build_architecture(arch: str, input_shape: Optional[Sequence[int]] = None, classes: int = 2,
                       **kwargs) -> NetworkSpec:
    """Resolve a CLI-style name (``dfunet-base``, ``dfunet-v1`` .. ``dfunet-v5``, ``lenet``)."""
    if arch == "lenet":
        return build_lenet(classes)
    if arch.startswith("dfunet-"):
        return build_dfunet(arch[len("dfunet-"):], input_shape or (3, 224, 224), classes, **kwargs)
    raise ValueError(f"unknown architecture {arch!r}")


def init_params(spec: NetworkSpec, seed: int = 0) -> Dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=DTYPE)
            continue
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return params


# -- execution --------------------------------------------------------------

def _branch_params(layer: LayerSpec, params, suffix: str):
    return [params[f"{layer.name}.{k}x{k}.{suffix}"] for k in (1, 3, 5)]


def forward(spec: NetworkSpec, params: Dict[str, np.ndarray], x) -> Tuple[np.ndarray, list]:
    """Run the network on a batch ``x`` (N x C x H x W). Returns the N x K
    logits and the per-layer cache ``backward`` needs."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4 or x.shape[1:] != tuple(spec.input_shape):
        raise ShapeError(f"network expects N x {'x'.join(map(str, spec.input_shape))} input, got {x.shape}")
    cache = []
    for i, layer in enumerate(spec.layers):
        try:
            x, aux = _layer_forward(layer, params, x)
        except (ShapeError, KeyError) as exc:
            raise ShapeError(f"layer {i} ({layer.name}): {exc}") from None
        cache.append(aux)
    return x, cache


def _layer_forward(layer: LayerSpec, params, x):
    kind, p = layer.kind, layer.params
    if kind == "conv":
        y, cols = L.conv2d_forward(x, p, params[f"{layer.name}.weight"], params[f"{layer.name}.bias"],
                                   return_cols=True)
        return y, (x, cols)
    if kind == "relu":
        return L.relu(x), x
    if kind == "pool":
        y, idx = L.pool_forward(x, p)
        return y, (x, idx)
    if kind == "global_pool":
        y, idx = L.global_pool_forward(x, p)
        return y, (x, idx)
    if kind == "lrn":
        return L.lrn_forward(x, p), x
    if kind == "parallel":
        y, inner = L.parallel_conv_forward(x, p, _branch_params(layer, params, "weight"),
                                           _branch_params(layer, params, "bias"))
        return y, (x, inner)
    if kind == "fc":
        flat = x.reshape(x.shape[0], -1)
        return L.fully_connected(flat, params[f"{layer.name}.weight"], params[f"{layer.name}.bias"]), (x.shape, flat)
    raise ValueError(f"unknown layer kind {kind!r}")


def backward_from(spec: NetworkSpec, params, cache, grad_logits) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Chain rule from an arbitrary upstream gradient on the logits.
    Returns ``(parameter gradients, gradient w.r.t. the input)``."""
    grads: Dict[str, np.ndarray] = {}
    g = np.asarray(grad_logits, dtype=DTYPE)
    for layer, aux in zip(reversed(spec.layers), reversed(cache)):
        kind, p, name = layer.kind, layer.params, layer.name
        if kind == "conv":
            x, cols = aux
            g, grads[f"{name}.weight"], grads[f"{name}.bias"] = L.conv2d_backward(
                x, p, params[f"{name}.weight"], g, cols=cols)
        elif kind == "relu":
            g = L.relu_backward(aux, g)
        elif kind == "pool":
            x, idx = aux
            g = L.pool_backward(x, p, idx, g)
        elif kind == "global_pool":
            x, idx = aux
            g = L.global_pool_backward(x, p, idx, g)
        elif kind == "lrn":
            g = L.lrn_backward(aux, p, g)
        elif kind == "parallel":
            x, inner = aux
            g, gws, gbs = L.parallel_conv_backward(x, p, _branch_params(layer, params, "weight"), inner, g)
            for k, gw, gb in zip((1, 3, 5), gws, gbs):
                grads[f"{name}.{k}x{k}.weight"] = gw
                grads[f"{name}.{k}x{k}.bias"] = gb
        elif kind == "fc":
            in_shape, flat = aux
            gx, grads[f"{name}.weight"], grads[f"{name}.bias"] = L.fully_connected_backward(
                flat, params[f"{name}.weight"], g)
            g = gx.reshape(in_shape)
    return grads, g


def backward(spec: NetworkSpec, params, cache, logits, labels) -> Tuple[Dict[str, np.ndarray], float]:
    """Gradients of the batch-mean softmax cross-entropy. Returns ``(grads, loss)``."""
    _, loss, grad_z = L.softmax_cross_entropy(logits, np.asarray(labels))
    grads, _ = backward_from(spec, params, cache, grad_z)
    return grads, loss


def loss_and_gradients(spec: NetworkSpec, params, x, labels):
    """Returns ``(loss, probabilities, grads)`` for one batch."""
    logits, cache = forward(spec, params, x)
    grads, loss = backward(spec, params, cache, logits, labels)
    return loss, L.softmax(logits), grads


def predict_proba(spec: NetworkSpec, params, x, batch_size: int = 32) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    out = [L.softmax(forward(spec, params, x[i:i + batch_size])[0]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)
