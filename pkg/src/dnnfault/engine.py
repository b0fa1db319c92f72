"""Instrumented mini-batch training loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import objectives
from .detector import Verdict, VerdictCode, make_verdict
from .errors import ContractError, ShapeError
from .layers import Activation, Layer, chain_shapes
from .probes import BatchSnapshot, SnapshotRecorder, TrainPlan
from .tensor import Rng, Tensor


@dataclass
class Model:
    """An ordered stack of layers plus the loss, optimizer and task used to train it."""

    layers: list
    loss: str
    optimizer: object
    task: str
    input_shape: tuple
    rng: Rng = field(default_factory=lambda: Rng(0))

    @classmethod
    def build(cls, layers: Sequence[Layer], input_shape: Sequence[int], loss: str, optimizer,
              task: str = "none", seed: int = 0) -> "Model":
        """Assign fault-report indices, check shapes and initialise parameters from ``seed``."""
        model = cls(list(layers), objectives.canonical_loss(loss), optimizer, task, tuple(input_shape), Rng(seed))
        if task not in objectives.TASKS:
            raise ContractError(f"unknown task {task!r}")
        model.assign_user_indices()
        model.validate()
        shape = model.input_shape
        for layer in model.layers:
            shape = layer.build(shape, model.rng)
        return model

    def assign_user_indices(self) -> None:
        # Layers report under the nearest preceding parameterized layer; leading
        # parameterless layers report under the first one.
        counter = 0
        first_param = next((i for i, l in enumerate(self.layers) if l.parameterized), None)
        for i, layer in enumerate(self.layers):
            if layer.parameterized:
                counter += 1
            layer.user_index = counter if counter else (1 if first_param is not None else 0)

    def validate(self) -> None:
        if not any(l.parameterized for l in self.layers):
            raise ContractError("a trainable model needs at least one Dense or Conv2D layer")
        chain_shapes(self.layers, self.input_shape)

    @property
    def output_shape(self) -> tuple:
        return chain_shapes(self.layers, self.input_shape)[-1] if self.layers else self.input_shape

    @property
    def parameterized(self) -> list:
        return [l for l in self.layers if l.parameterized]

    def weights(self) -> list:
        return [tuple(p.copy() for p in l.params) for l in self.parameterized]

    def _fused_tail(self) -> Optional[str]:
        last = self.layers[-1]
        if isinstance(last, Activation) and (
            (last.fn == "softmax" and self.loss == "categorical_crossentropy")
            or (last.fn == "sigmoid" and self.loss == "binary_crossentropy")
        ):
            return last.fn
        return None


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 1
    shuffle: bool = False
    seed: int = 0
    input_scale: float = 1.0

    def __post_init__(self):
        if not self.input_scale > 0:
            raise ContractError(f"input_scale must be > 0, got {self.input_scale}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainOutcome:
    verdict: Verdict
    epoch_loss: list
    epoch_accuracy: list
    batches_executed: int
    elapsed_seconds: float
    final_loss: Optional[float] = None
    final_accuracy: Optional[float] = None


def _forward(model: Model, x: Tensor, training: bool, rng: Optional[Rng],
             recorder: Optional[SnapshotRecorder]) -> Tensor:
    current = None  # [user_index, v1, v2]
    for layer in model.layers:
        x = layer.forward(x, training, rng)
        if recorder is None:
            continue
        if layer.parameterized:
            if current is not None:
                recorder.capture_forward(current[0], current[1], current[2] if current[2] is not None else current[1])
            current = [layer.user_index, x, None]
        elif isinstance(layer, Activation) and current is not None and current[2] is None:
            current[2] = x
    if recorder is not None and current is not None:
        recorder.capture_forward(current[0], current[1], current[2] if current[2] is not None else current[1])
    return x


def _backward(model: Model, output: Tensor, y: Tensor, recorder: Optional[SnapshotRecorder]) -> None:
    layers = model.layers
    fused = model._fused_tail()
    if fused is not None:
        dy = objectives.fused_output_grad(model.loss, fused, output, y)
        layers = layers[:-1]
    else:
        dy = objectives.loss_grad(model.loss, output, y)
    for layer in reversed(layers):
        dx, params, grads = layer.backward(dy, model.optimizer)
        if recorder is not None and layer.parameterized:
            flat_w = np.concatenate([p.reshape(-1) for p in params])
            flat_dw = np.concatenate([g.reshape(-1) for g in grads])
            recorder.capture_backward(layer.user_index, dx, flat_w, flat_dw)
        dy = dx


def _check_data(model: Model, x: Tensor, y: Optional[Tensor] = None) -> None:
    if x.ndim < 2 or x.shape[0] == 0:
        raise ContractError(f"need a non-empty batch of inputs, got shape {x.shape}")
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeError(f"inputs have per-sample shape {tuple(x.shape[1:])}, model expects {model.input_shape}")
    if y is not None:
        if y.shape[0] != x.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if tuple(y.shape[1:]) != tuple(model.output_shape):
            raise ShapeError(f"labels have per-sample shape {tuple(y.shape[1:])}, model outputs {model.output_shape}")


def fit(model: Model, x: Tensor, y: Tensor, config: TrainConfig,
        observers: Sequence = ()) -> TrainOutcome:
    """Train ``model`` and dispatch a snapshot of every batch to ``observers``.

    The first observer to return a verdict stops training. Otherwise the
    outcome carries the first observer's ``finish()`` verdict when it has one,
    else a plain CM verdict.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if config.input_scale != 1.0:
        x = x * config.input_scale
    model.validate()
    _check_data(model, x, y)
    n = x.shape[0]
    if config.batch_size > n:
        raise ContractError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    batches = math.ceil(n / config.batch_size)
    plan = TrainPlan(config.epochs, batches)
    for obs in observers:
        hook = getattr(obs, "on_train_begin", None)
        if hook is not None:
            hook(plan)

    rng = Rng(config.seed)
    start = time.perf_counter()
    epoch_loss: list = []
    epoch_acc: list = []
    executed = 0
    last_loss = last_acc = None
    instrument = bool(observers)

    def outcome(verdict: Verdict) -> TrainOutcome:
        return TrainOutcome(verdict, epoch_loss, epoch_acc, executed, time.perf_counter() - start,
                            last_loss, last_acc)

    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else None
        losses, accs = [], []
        for b in range(batches):
            rows = slice(b * config.batch_size, min(n, (b + 1) * config.batch_size))
            if order is None:
                xb, yb = x[rows], y[rows]
            else:
                idx = order[rows]
                xb, yb = x[idx], y[idx]
            recorder = SnapshotRecorder(epoch, b, executed) if instrument else None
            out = _forward(model, xb, True, rng, recorder)
            loss = objectives.loss_value(model.loss, out, yb)
            acc = objectives.accuracy(out, yb, model.task)
            _backward(model, out, yb, recorder)
            executed += 1
            last_loss, last_acc = loss, acc
            losses.append(loss)
            if acc is not None:
                accs.append(acc)
            if recorder is None:
                continue
            snapshot = recorder.build(loss, acc)
            for obs in observers:
                verdict = obs.on_batch_end(snapshot)
                if verdict is not None:
                    epoch_loss.append(_mean_or_none(losses))
                    epoch_acc.append(_mean_or_none(accs))
                    return outcome(verdict)
        epoch_loss.append(_mean_or_none(losses))
        epoch_acc.append(_mean_or_none(accs))

    for obs in observers:
        finisher = getattr(obs, "finish", None)
        if finisher is not None:
            return outcome(finisher())
    return outcome(make_verdict(VerdictCode.CM, None, None, time.perf_counter() - start))


def _mean_or_none(values: list) -> Optional[float]:
    if not values:
        return None
    with np.errstate(all="ignore"):
        return float(np.mean(values))


def predict(model: Model, x: Tensor) -> Tensor:
    """Inference pass: dropout disabled, nothing recorded."""
    x = np.asarray(x, dtype=np.float64)
    _check_data(model, x)
    for layer in model.layers:
        x = layer.forward(x, False, None)
    return x
