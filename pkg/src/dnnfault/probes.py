"""Per-batch instrumentation: what the training loop records and who sees it.

A :class:`SnapshotRecorder` collects forward records (pre/post-activation
outputs) in layer order and backward records (propagated gradient, updated
weights, raw weight gradients) in reverse layer order, then freezes them into
an immutable :class:`BatchSnapshot`. Observers receive one snapshot per batch
through ``on_batch_end`` and may stop training by returning a verdict.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import IO, Optional, Protocol, runtime_checkable

import numpy as np

from . import _json
from .errors import ContractError, ProtocolError
from .tensor import Tensor, mean, std


class Location(str, enum.Enum):
    FW = "FW"  # pre-activation output
    AF = "AF"  # post-activation output
    BW = "BW"  # propagated gradient
    WT = "WT"  # updated weights


def _frozen_copy(t: Tensor) -> Tensor:
    out = np.array(t, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ForwardRecord:
    user_index: int
    pre_activation: Tensor
    post_activation: Tensor


@dataclass(frozen=True)
class BackwardRecord:
    user_index: int
    propagated_gradient: Tensor
    updated_params_flat: Tensor
    delta_params_flat: Tensor

    @property
    def has_params(self) -> bool:
        return self.updated_params_flat.size > 0


@dataclass(frozen=True)
class BatchSnapshot:
    epoch: int
    batch: int
    global_iteration: int
    forward: tuple
    loss: float
    accuracy: Optional[float]
    backward: tuple

    def summary(self) -> dict:
        """Per-layer mean/std digest used by the JSONL trace."""

        def stats(t: Tensor) -> dict:
            if t.size == 0:
                return {"mean": None, "std": None}
            return {"mean": _json.number(mean(t)), "std": _json.number(std(t))}

        return {
            "epoch": self.epoch,
            "batch": self.batch,
            "iteration": self.global_iteration,
            "loss": _json.number(self.loss),
            "accuracy": _json.number(self.accuracy),
            "forward": [
                {"layer": r.user_index, "FW": stats(r.pre_activation), "AF": stats(r.post_activation)}
                for r in self.forward
            ],
            "backward": [
                {
                    "layer": r.user_index,
                    "BW": stats(r.propagated_gradient),
                    "WT": stats(r.updated_params_flat),
                    "dW": stats(r.delta_params_flat),
                }
                for r in self.backward
            ],
        }


class SnapshotRecorder:
    """Record sink for one batch. Enforces capture order and uniqueness."""

    def __init__(self, epoch: int, batch: int, global_iteration: int):
        self.epoch = epoch
        self.batch = batch
        self.global_iteration = global_iteration
        self._forward: list[ForwardRecord] = []
        self._backward: list[BackwardRecord] = []
        self._built = False

    def capture_forward(self, user_index: int, v1: Tensor, v2: Tensor) -> None:
        self._check_open()
        if any(r.user_index == user_index for r in self._forward):
            raise ProtocolError(f"forward values for layer {user_index} already captured in this batch")
        if self._forward and user_index < self._forward[-1].user_index:
            raise ProtocolError(
                f"forward capture out of order: layer {user_index} after layer {self._forward[-1].user_index}"
            )
        if self._backward:
            raise ProtocolError("forward capture after backward capture started")
        self._forward.append(ForwardRecord(user_index, _frozen_copy(v1), _frozen_copy(v2)))

    def capture_backward(self, user_index: int, v3: Tensor, w_flat: Tensor, dw_flat: Tensor) -> None:
        self._check_open()
        if any(r.user_index == user_index for r in self._backward):
            raise ProtocolError(f"backward values for layer {user_index} already captured in this batch")
        if self._backward and user_index > self._backward[-1].user_index:
            raise ProtocolError(
                f"backward capture out of order: layer {user_index} after layer {self._backward[-1].user_index}"
            )
        w = _frozen_copy(np.ravel(w_flat))
        dw = _frozen_copy(np.ravel(dw_flat))
        if w.size != dw.size:
            raise ContractError(f"layer {user_index}: {w.size} weights but {dw.size} weight gradients")
        self._backward.append(BackwardRecord(user_index, _frozen_copy(v3), w, dw))

    def build(self, loss: float, accuracy: Optional[float]) -> BatchSnapshot:
        self._check_open()
        if not self._forward:
            raise ProtocolError("cannot build a snapshot without any forward records")
        self._built = True
        return BatchSnapshot(
            epoch=self.epoch,
            batch=self.batch,
            global_iteration=self.global_iteration,
            forward=tuple(self._forward),
            loss=float(loss),
            accuracy=None if accuracy is None else float(accuracy),
            backward=tuple(self._backward),
        )

    def _check_open(self) -> None:
        if self._built:
            raise ProtocolError("snapshot already built for this batch")


def capture_forward(sink: SnapshotRecorder, user_index: int, v1: Tensor, v2: Tensor) -> None:
    sink.capture_forward(user_index, v1, v2)


def capture_backward(sink: SnapshotRecorder, user_index: int, v3: Tensor, w_flat: Tensor, dw_flat: Tensor) -> None:
    sink.capture_backward(user_index, v3, w_flat, dw_flat)


@dataclass(frozen=True)
class TrainPlan:
    """What an observer is told before the first batch."""

    epochs: int
    batches_per_epoch: int

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.batches_per_epoch


@runtime_checkable
class Observer(Protocol):
    """Anything with ``on_batch_end``. Returning a verdict halts training.

    Observers may also define ``on_train_begin(plan: TrainPlan)``; the engine
    calls it once before the first batch when present.
    """

    def on_batch_end(self, snapshot: BatchSnapshot):
        ...


class TraceWriter:
    """Observer that streams one summarised JSON object per snapshot and never stops training."""

    name = "trace"

    def __init__(self, stream: IO[str]):
        self.stream = stream

    def on_batch_end(self, snapshot: BatchSnapshot):
        self.stream.write(_json.dumps(snapshot.summary(), sort_keys=True) + "\n")
        return None
