"""Losses, the accuracy metric, optimizers and weight initializers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Rng, Tensor

EPSILON = 1e-7

LOSSES = ("mse", "mae", "binary_crossentropy", "categorical_crossentropy")
LOSS_ALIASES = {
    "mean_squared_error": "mse",
    "mean_absolute_error": "mae",
}
TASKS = ("binary", "categorical", "none")


def canonical_loss(name: str) -> str:
    name = LOSS_ALIASES.get(name, name)
    if name not in LOSSES:
        raise ContractError(f"unknown loss {name!r}; expected one of {LOSSES}")
    return name


def _check_pair(y_pred: Tensor, y_true: Tensor) -> None:
    if y_pred.shape != y_true.shape:
        raise ShapeError(f"prediction shape {y_pred.shape} does not match target shape {y_true.shape}")
    if y_pred.size == 0:
        raise ContractError("loss of an empty batch is undefined")


def _clip(p: Tensor) -> Tensor:
    return np.clip(p, EPSILON, 1.0 - EPSILON)


def _inside_clip(p: Tensor) -> Tensor:
    # d clip(p)/dp: 1 inside the band, 0 outside (NaN stays NaN through the product).
    return ((p >= EPSILON) & (p <= 1.0 - EPSILON)).astype(np.float64)


def loss_value(kind: str, y_pred: Tensor, y_true: Tensor) -> float:
    """Batch-mean loss. NaN/Inf in the predictions propagate to the result."""
    kind = canonical_loss(kind)
    _check_pair(y_pred, y_true)
    with np.errstate(all="ignore"):
        if kind == "mse":
            return float(np.mean((y_pred - y_true) ** 2))
        if kind == "mae":
            return float(np.mean(np.abs(y_pred - y_true)))
        p = _clip(y_pred)
        if kind == "binary_crossentropy":
            return float(np.mean(-(y_true * np.log(p) + (1.0 - y_true) * np.log(1.0 - p))))
        per_sample = -np.sum(y_true * np.log(p), axis=tuple(range(1, p.ndim)))
        return float(np.mean(per_sample))


def loss_grad(kind: str, y_pred: Tensor, y_true: Tensor) -> Tensor:
    """Gradient of :func:`loss_value` with respect to ``y_pred``."""
    kind = canonical_loss(kind)
    _check_pair(y_pred, y_true)
    batch = y_pred.shape[0]
    with np.errstate(all="ignore"):
        if kind == "mse":
            return 2.0 * (y_pred - y_true) / y_pred.size
        if kind == "mae":
            return np.sign(y_pred - y_true) / y_pred.size
        p = _clip(y_pred)
        gate = _inside_clip(y_pred)
        if kind == "binary_crossentropy":
            return gate * (-y_true / p + (1.0 - y_true) / (1.0 - p)) / y_pred.size
        return gate * (-y_true / p) / batch


def fused_output_grad(kind: str, activation: str, y_pred: Tensor, y_true: Tensor) -> Optional[Tensor]:
    """Gradient with respect to the *pre-activation* of the output layer.

    Available for softmax + categorical cross-entropy and sigmoid + binary
    cross-entropy, where it reduces to ``(p - y)`` over the loss's
    normaliser. Returns None for any other pairing.
    """
    kind = canonical_loss(kind)
    _check_pair(y_pred, y_true)
    with np.errstate(all="ignore"):
        if kind == "categorical_crossentropy" and activation == "softmax":
            return (y_pred - y_true) / y_pred.shape[0]
        if kind == "binary_crossentropy" and activation == "sigmoid":
            return (y_pred - y_true) / y_pred.size
    return None


def accuracy(y_pred: Tensor, y_true: Tensor, task: str) -> Optional[float]:
    """Fraction of correct predictions, or None for regression (``task='none'``)."""
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")
    if y_pred.shape != y_true.shape:
        raise ShapeError(f"prediction shape {y_pred.shape} does not match target shape {y_true.shape}")
    if task == "none":
        return None
    if np.isnan(y_pred).any():
        return math.nan
    if task == "binary":
        hits = (y_pred > 0.5) == (y_true > 0.5)
        return float(np.mean(hits))
    pred = np.argmax(y_pred.reshape(y_pred.shape[0], -1), axis=1)
    true = np.argmax(y_true.reshape(y_true.shape[0], -1), axis=1)
    return float(np.mean(pred == true))


# -- optimizers ---------------------------------------------------------------


@dataclass
class Slot:
    """Per-parameter optimizer state."""

    first: Tensor
    second: Optional[Tensor] = None
    step: int = 0


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01
    momentum: float = 0.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ContractError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")

    def new_slot(self, shape: Sequence[int]) -> Slot:
        return Slot(first=np.zeros(tuple(shape)))

    def step(self, param: Tensor, grad: Tensor, slot: Slot) -> Tensor:
        _check_step(param, grad, slot)
        with np.errstate(all="ignore"):
            slot.first = self.momentum * slot.first + grad
            slot.step += 1
            if self.lr == 0:
                return param.copy()
            return param - self.lr * slot.first


@dataclass(frozen=True)
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr >= 0:
            raise ContractError(f"learning rate must be >= 0, got {self.lr}")

    def new_slot(self, shape: Sequence[int]) -> Slot:
        return Slot(first=np.zeros(tuple(shape)), second=np.zeros(tuple(shape)))

    def step(self, param: Tensor, grad: Tensor, slot: Slot) -> Tensor:
        _check_step(param, grad, slot)
        with np.errstate(all="ignore"):
            slot.step += 1
            slot.first = self.beta1 * slot.first + (1.0 - self.beta1) * grad
            slot.second = self.beta2 * slot.second + (1.0 - self.beta2) * grad * grad
            m_hat = slot.first / (1.0 - self.beta1**slot.step)
            v_hat = slot.second / (1.0 - self.beta2**slot.step)
            if self.lr == 0:
                return param.copy()
            return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


Optimizer = Union[SGD, Adam]


def _check_step(param: Tensor, grad: Tensor, slot: Slot) -> None:
    if param.shape != grad.shape or slot.first.shape != param.shape:
        raise ShapeError(
            f"optimizer step shapes differ: param {param.shape}, grad {grad.shape}, slot {slot.first.shape}"
        )


def optimizer_step(opt, param: Tensor, grad: Tensor, slot: Slot) -> Tensor:
    return opt.step(param, grad, slot)


def make_optimizer(kind: str, **kwargs):
    key = kind.lower()
    if key == "sgd":
        return SGD(**kwargs)
    if key == "adam":
        return Adam(**kwargs)
    raise ContractError(f"unknown optimizer {kind!r}; expected SGD or Adam")


# -- initializers -------------------------------------------------------------


@dataclass(frozen=True)
class RandomNormal:
    stddev: float = 0.05
    mean: float = 0.0


@dataclass(frozen=True)
class GlorotUniform:
    pass


@dataclass(frozen=True)
class Zeros:
    pass


INITIALIZERS = {"RandomNormal": RandomNormal, "GlorotUniform": GlorotUniform, "Zeros": Zeros}


def fans(shape: Sequence[int]) -> tuple[int, int]:
    """(fan_in, fan_out) for a Dense kernel, a Conv2D kernel, or a bias vector."""
    shape = tuple(shape)
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 4:
        kh, kw, cin, filters = shape
        return kh * kw * cin, kh * kw * filters
    if len(shape) == 1:
        return shape[0], shape[0]
    raise ContractError(f"cannot derive fans for shape {shape}")


def glorot_bound(shape: Sequence[int]) -> float:
    fan_in, fan_out = fans(shape)
    return math.sqrt(6.0 / (fan_in + fan_out))


def initialize(kind, shape: Sequence[int], rng: Rng) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if isinstance(kind, Zeros):
        return np.zeros(shape)
    if isinstance(kind, RandomNormal):
        return rng.normal(shape, mean=kind.mean, stddev=kind.stddev)
    if isinstance(kind, GlorotUniform):
        a = glorot_bound(shape)
        return rng.uniform(shape, -a, a)
    raise ContractError(f"unknown initializer {kind!r}")
