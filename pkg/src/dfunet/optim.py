"""Adam, the step-down learning-rate policy and the mini-batch training loop."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import netzoo
from .tensor import DTYPE, ShapeError

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam update. Returns new parameter arrays and
    advances ``state`` in place (``t``, ``m``, ``v``)."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if set(grads) != set(params):
        raise ShapeError("gradients and parameters name different tensors")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    updated = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ShapeError(f"optimizer state for {name} has shape {m.shape}, parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        updated[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    state.t = t
    return updated


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 0.001
    gamma: float = 0.1
    step_fraction: float = 0.33
    total_iterations: int = 1

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.step_fraction <= 1:
            raise ValueError("step_fraction must lie in (0, 1]")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be positive")

    @property
    def step_size(self) -> int:
        return math.ceil(self.step_fraction * self.total_iterations)


def lr_at(schedule: LrSchedule, iteration: int) -> float:
    if not 0 <= iteration < schedule.total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {schedule.total_iterations})")
    return schedule.base_lr * schedule.gamma ** (iteration // schedule.step_size)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    base_lr: float = 0.001
    gamma: float = 0.1
    step_fraction: float = 0.33
    seed: int = 0
    #: stop after an epoch whose running training accuracy reaches this value
    stop_at_accuracy: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @classmethod
    def for_arch(cls, arch: str, **overrides) -> "TrainConfig":
        if arch == "lenet":
            base = dict(epochs=60, base_lr=0.01)
        else:
            base = dict(epochs=40, batch_size=8, base_lr=0.001)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def schedule(self, n_samples: int) -> LrSchedule:
        per_epoch = math.ceil(n_samples / self.batch_size)
        return LrSchedule(self.base_lr, self.gamma, self.step_fraction, self.epochs * per_epoch)


@dataclass
class EpochRecord:
    epoch: int
    iteration: int
    lr: float
    loss: float
    train_accuracy: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    HEADER = "epoch,iteration,lr,loss,train_accuracy"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.HEADER + "\n")
        for r in self.records:
            buf.write(f"{r.epoch},{r.iteration},{r.lr:.10g},{r.loss:.10g},{r.train_accuracy:.10g}\n")
        return buf.getvalue()


def train(spec: netzoo.NetworkSpec, params: Dict[str, np.ndarray], X, y, config: TrainConfig,
          state: Optional[AdamState] = None,
          on_epoch: Optional[Callable[[EpochRecord, Dict[str, np.ndarray]], Optional[bool]]] = None):
    """Mini-batch Adam with the step-down schedule.

    Batches come from one seeded permutation per epoch; the final partial
    batch is kept. Loss and accuracy in the log are running means over the
    epoch's batches. ``on_epoch`` receives each record and the current
    parameters; returning True ends training after that epoch. Returns
    ``(params, log, state)``.
    """
    X = np.asarray(X, dtype=DTYPE)
    y = np.asarray(y, dtype=np.int64)
    n = len(X)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(y) != n:
        raise ShapeError(f"{n} samples but {len(y)} labels")
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    if X.shape[1:] != tuple(spec.input_shape):
        raise ShapeError(f"samples have shape {X.shape[1:]}, network expects {spec.input_shape}")
    schedule = config.schedule(n)
    state = state if state is not None else AdamState()
    rng = np.random.default_rng(config.seed)
    params = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    log = TrainLog()
    iteration = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        lr = schedule.base_lr
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, probs, grads = netzoo.loss_and_gradients(spec, params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, b, loss)
            lr = lr_at(schedule, iteration)
            params = adam_step(params, grads, state, lr)
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
            iteration += 1
        record = EpochRecord(epoch, iteration - 1, lr, loss_sum / n, correct / n)
        log.records.append(record)
        logger.info("epoch %d  loss %.5f  acc %.4f  lr %.2g", epoch, record.loss, record.train_accuracy, lr)
        if on_epoch is not None and on_epoch(record, params):
            break
        if config.stop_at_accuracy is not None and record.train_accuracy >= config.stop_at_accuracy:
            break
    return params, log, state
