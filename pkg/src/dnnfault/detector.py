"""Statistical fault localisation over per-batch training snapshots.

:func:`ana` keeps, for every (layer, location) pair, the history of batch
means and a counter of exactly-zero means, and flags three symptoms: a
non-finite mean, a mean that is zero too often, and a mean that has not
changed (bit for bit) over the last ``window_n`` calls.

:func:`check_batch` runs the checks over one snapshot in a fixed order and
returns the first failure: forward values layer by layer (EBA before EAA),
then the loss (ELF), the accuracy (EAF), learning stagnation (MDL), and
finally the backward records from the output layer down (EBDW before EBW).

:class:`TerminateOnNaN` and :class:`EarlyStopping` are the framework-style
baseline monitors. They stop training but never name a layer.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional

from .errors import ConfigurationError, ContractError, ProtocolError
from .probes import BatchSnapshot, Location, TrainPlan
from .tensor import Tensor, mean


class VerdictCode(str, enum.Enum):
    EBA = "EBA"
    EAA = "EAA"
    ELF = "ELF"
    EAF = "EAF"
    EBW = "EBW"
    EBDW = "EBDW"
    MDL = "MDL"
    CM = "CM"


STATEMENTS = {
    VerdictCode.EBA: "Error Before Activation",
    VerdictCode.EAA: "Error After Activation",
    VerdictCode.ELF: "Error in Loss Function",
    VerdictCode.EAF: "Error in Accuracy Function",
    VerdictCode.EBW: "Error Backward in Weight",
    VerdictCode.EBDW: "Error Backward in Delta Weight",
    VerdictCode.MDL: "Model Does not Learn",
    VerdictCode.CM: "Correct Model",
}

PHASES = {
    VerdictCode.EBA: "forward",
    VerdictCode.EAA: "forward",
    VerdictCode.ELF: "metric",
    VerdictCode.EAF: "metric",
    VerdictCode.MDL: "metric",
    VerdictCode.EBW: "backward",
    VerdictCode.EBDW: "backward",
    VerdictCode.CM: "terminal",
}

LAYER_CODES = frozenset({VerdictCode.EBA, VerdictCode.EAA, VerdictCode.EBW, VerdictCode.EBDW})
CHECK_CODES = frozenset(VerdictCode) - {VerdictCode.CM}


@dataclass(frozen=True)
class Verdict:
    code: VerdictCode
    layer: Optional[int]
    phase: str
    epoch: Optional[int]
    batch: Optional[int]
    iteration: Optional[int]
    elapsed_seconds: float
    message: str

    def __post_init__(self):
        code = VerdictCode(self.code)
        object.__setattr__(self, "code", code)
        if self.phase != PHASES[code]:
            raise ContractError(f"{code.value} verdicts belong to phase {PHASES[code]!r}, got {self.phase!r}")
        if code in LAYER_CODES and (self.layer is None or self.layer < 1):
            raise ContractError(f"{code.value} verdicts must name a layer (>= 1)")
        if code not in LAYER_CODES and self.layer is not None:
            raise ContractError(f"{code.value} verdicts carry no layer")

    @property
    def is_fault(self) -> bool:
        return self.code is not VerdictCode.CM

    def to_json(self) -> dict:
        return {
            "code": self.code.value,
            "layer": self.layer,
            "phase": self.phase,
            "epoch": self.epoch,
            "batch": self.batch,
            "iteration": self.iteration,
            "elapsed_seconds": self.elapsed_seconds,
            "message": self.message,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Verdict":
        return cls(
            code=VerdictCode(obj["code"]),
            layer=obj["layer"],
            phase=obj["phase"],
            epoch=obj["epoch"],
            batch=obj["batch"],
            iteration=obj["iteration"],
            elapsed_seconds=obj["elapsed_seconds"],
            message=obj["message"],
        )


def make_verdict(code: VerdictCode, layer: Optional[int], snapshot: Optional[BatchSnapshot],
                 elapsed: float, detail: str = "") -> Verdict:
    where = f" at layer {layer}" if layer is not None else ""
    if snapshot is not None:
        pos = f" (epoch {snapshot.epoch}, batch {snapshot.batch}, iteration {snapshot.global_iteration})"
        epoch, batch, it = snapshot.epoch, snapshot.batch, snapshot.global_iteration
    else:
        pos, epoch, batch, it = "", None, None, None
    msg = f"{STATEMENTS[code]}{where}{pos}"
    if detail:
        msg += f": {detail}"
    return Verdict(code, layer, PHASES[code], epoch, batch, it, elapsed, msg)


@dataclass(frozen=True)
class DetectorConfig:
    """Tunables for :func:`ana` and :func:`check_batch`.

    ``total_iterations`` is the planned number of batches (epochs x batches
    per epoch); the chronic-zero threshold is ``ceil(zero_threshold_fraction
    * total_iterations)``. The engine fills it in through ``on_train_begin``
    when left as None.

    ``ebdw_source`` chooses what the EBDW check inspects: ``"propagated"``
    (the gradient handed to the previous layer) or ``"delta"`` (the raw
    weight gradients).
    """

    window_n: int = 50
    zero_threshold_fraction: Fraction = Fraction(1, 4)
    num_steps: int = 50
    stagnation_tolerance: float = 0.0
    eaf_zero_consecutive: int = 1
    enabled: frozenset = CHECK_CODES
    total_iterations: Optional[int] = None
    ebdw_source: str = "propagated"

    def __post_init__(self):
        object.__setattr__(self, "zero_threshold_fraction", Fraction(self.zero_threshold_fraction))
        object.__setattr__(self, "enabled", frozenset(VerdictCode(c) for c in self.enabled))
        if self.window_n < 2:
            raise ConfigurationError(f"window_n must be >= 2, got {self.window_n}")
        if self.num_steps < 1:
            raise ConfigurationError(f"num_steps must be >= 1, got {self.num_steps}")
        if not 0 < self.zero_threshold_fraction <= 1:
            raise ConfigurationError(f"zero_threshold_fraction must lie in (0, 1], got {self.zero_threshold_fraction}")
        if self.eaf_zero_consecutive < 1:
            raise ConfigurationError("eaf_zero_consecutive must be >= 1")
        if self.ebdw_source not in ("propagated", "delta"):
            raise ConfigurationError(f"ebdw_source must be 'propagated' or 'delta', got {self.ebdw_source!r}")
        if self.total_iterations is not None and self.total_iterations < 0:
            raise ConfigurationError("total_iterations must be >= 0")

    def zero_threshold(self) -> int:
        if self.total_iterations is None:
            raise ConfigurationError("total_iterations is unknown; set it or attach the detector to a training run")
        return max(1, math.ceil(self.zero_threshold_fraction * self.total_iterations))


@dataclass
class KeyStats:
    mean_history: list = field(default_factory=list)
    zero_count: int = 0
    calls: int = 0


@dataclass
class AnaState:
    keys: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    accuracy_history: list = field(default_factory=list)
    accuracy_zero_run: int = 0
    start_time: float = field(default_factory=time.perf_counter)
    last_snapshot: Optional[BatchSnapshot] = None
    failed: Optional[Verdict] = None
    finished: bool = False

    def stats(self, layer: int, location: Location) -> KeyStats:
        key = (layer, Location(location))
        if key not in self.keys:
            self.keys[key] = KeyStats()
        return self.keys[key]


def ana(state: AnaState, values: Tensor, layer: int, location: Location, config: DetectorConfig) -> bool:
    """Flag the (layer, location) series when its latest mean looks pathological."""
    stats = state.stats(layer, location)
    stats.calls += 1
    m = mean(values)
    if not math.isfinite(m):
        return True
    if m == 0.0:
        stats.zero_count += 1
        if stats.zero_count >= config.zero_threshold():
            return True
    stats.mean_history.append(m)
    n = config.window_n
    if len(stats.mean_history) >= n:
        window = stats.mean_history[-n:]
        first = window[0]
        if all(v == first for v in window):
            return True
    return False


def _slope(history: list, num_steps: int) -> float:
    return (history[-1] - history[-1 - num_steps]) / num_steps


def check_batch(state: AnaState, snapshot: BatchSnapshot, config: DetectorConfig,
                start_time: Optional[float] = None) -> Optional[Verdict]:
    """Run every enabled check over one snapshot and return the first failure, if any."""
    if state.failed is not None:
        raise ProtocolError("detector already reported a fault; start a fresh state")
    if not snapshot.forward:
        raise ProtocolError("snapshot has no forward records")
    t0 = state.start_time if start_time is None else start_time
    state.last_snapshot = snapshot
    on = config.enabled

    def fail(code: VerdictCode, layer: Optional[int] = None, detail: str = "") -> Verdict:
        state.failed = make_verdict(code, layer, snapshot, time.perf_counter() - t0, detail)
        return state.failed

    for rec in snapshot.forward:
        if VerdictCode.EBA in on and ana(state, rec.pre_activation, rec.user_index, Location.FW, config):
            return fail(VerdictCode.EBA, rec.user_index)
        if VerdictCode.EAA in on and ana(state, rec.post_activation, rec.user_index, Location.AF, config):
            return fail(VerdictCode.EAA, rec.user_index)

    loss = snapshot.loss
    if VerdictCode.ELF in on and not math.isfinite(loss):
        return fail(VerdictCode.ELF, detail=f"loss is {loss}")
    state.loss_history.append(loss)

    acc = snapshot.accuracy
    if acc is not None:
        if not math.isfinite(acc):
            if VerdictCode.EAF in on:
                return fail(VerdictCode.EAF, detail=f"accuracy is {acc}")
        elif acc == 0.0:
            state.accuracy_zero_run += 1
            if VerdictCode.EAF in on and state.accuracy_zero_run >= config.eaf_zero_consecutive:
                return fail(VerdictCode.EAF, detail="accuracy is 0")
        else:
            state.accuracy_zero_run = 0
        state.accuracy_history.append(acc)

    if VerdictCode.MDL in on and len(state.loss_history) > config.num_steps:
        tol = config.stagnation_tolerance
        loss_flat = _slope(state.loss_history, config.num_steps) >= -tol
        if acc is None:
            stalled = loss_flat
        else:
            stalled = (
                loss_flat
                and len(state.accuracy_history) > config.num_steps
                and _slope(state.accuracy_history, config.num_steps) <= tol
            )
        if stalled:
            return fail(VerdictCode.MDL, detail=f"no progress over the last {config.num_steps} iterations")

    for rec in snapshot.backward:
        if VerdictCode.EBDW in on:
            source = rec.propagated_gradient if config.ebdw_source == "propagated" else rec.delta_params_flat
            if source.size and ana(state, source, rec.user_index, Location.BW, config):
                return fail(VerdictCode.EBDW, rec.user_index)
        if VerdictCode.EBW in on and rec.has_params:
            if ana(state, rec.updated_params_flat, rec.user_index, Location.WT, config):
                return fail(VerdictCode.EBW, rec.user_index)
    return None


def finish(state: AnaState) -> Verdict:
    """Terminal verdict for a run in which no check ever failed."""
    if state.failed is not None:
        raise ProtocolError(f"finish() after a fault verdict ({state.failed.code.value})")
    state.finished = True
    snap = state.last_snapshot
    return make_verdict(VerdictCode.CM, None, snap, time.perf_counter() - state.start_time)


class DeepLocalize:
    """Observer wrapping :func:`check_batch` with its own state."""

    name = "deeplocalize"

    def __init__(self, config: Optional[DetectorConfig] = None):
        self.config = config or DetectorConfig()
        self.state = AnaState()

    def on_train_begin(self, plan: TrainPlan) -> None:
        if self.config.total_iterations is None:
            self.config = replace(self.config, total_iterations=plan.total_iterations)
        self.state.start_time = time.perf_counter()

    def on_batch_end(self, snapshot: BatchSnapshot) -> Optional[Verdict]:
        return check_batch(self.state, snapshot, self.config)

    def finish(self) -> Verdict:
        return finish(self.state)


# -- baselines ----------------------------------------------------------------


def baseline_terminate_on_nan(snapshot: BatchSnapshot, elapsed: float = 0.0) -> Optional[Verdict]:
    if math.isnan(snapshot.loss):
        return make_verdict(VerdictCode.ELF, None, snapshot, elapsed, "TerminateOnNaN")
    return None


class TerminateOnNaN:
    """Stops when the batch loss is NaN. Infinite losses do not stop it."""

    name = "terminate-on-nan"

    def __init__(self):
        self.start_time = time.perf_counter()

    def on_train_begin(self, plan: TrainPlan) -> None:
        self.start_time = time.perf_counter()

    def on_batch_end(self, snapshot: BatchSnapshot) -> Optional[Verdict]:
        return baseline_terminate_on_nan(snapshot, time.perf_counter() - self.start_time)


class EarlyStopping:
    """Stops after ``patience`` consecutive batches without improvement beyond ``min_delta``.

    Loss must decrease and accuracy must increase to count as improvement.
    """

    def __init__(self, monitor: str = "loss", patience: int = 1, min_delta: float = 0.0):
        if monitor not in ("loss", "accuracy"):
            raise ConfigurationError(f"EarlyStopping monitors 'loss' or 'accuracy', not {monitor!r}")
        if patience < 1:
            raise ConfigurationError("patience must be >= 1")
        self.monitor = monitor
        self.patience = patience
        self.min_delta = abs(min_delta)
        self.name = "early-stop-loss" if monitor == "loss" else "early-stop-acc"
        self.best: Optional[float] = None
        self.wait = 0
        self.start_time = time.perf_counter()

    def on_train_begin(self, plan: TrainPlan) -> None:
        self.start_time = time.perf_counter()

    def _value(self, snapshot: BatchSnapshot) -> float:
        if self.monitor == "loss":
            return snapshot.loss
        if snapshot.accuracy is None:
            raise ConfigurationError("EarlyStopping(monitor='accuracy') on a task without accuracy")
        return snapshot.accuracy

    def on_batch_end(self, snapshot: BatchSnapshot) -> Optional[Verdict]:
        value = self._value(snapshot)
        if self.best is None:
            self.best = value
            return None
        if self.monitor == "loss":
            improved = value < self.best - self.min_delta
        else:
            improved = value > self.best + self.min_delta
        if improved:
            self.best = value
            self.wait = 0
            return None
        self.wait += 1
        if self.wait >= self.patience:
            return make_verdict(VerdictCode.MDL, None, snapshot, time.perf_counter() - self.start_time,
                                f"EarlyStopping(monitor={self.monitor})")
        return None


def baseline_early_stopping(monitor: str, snapshots: Iterable[BatchSnapshot], patience: int = 1,
                            min_delta: float = 0.0) -> Optional[Verdict]:
    monitor_obj = EarlyStopping(monitor, patience, min_delta)
    for snap in snapshots:
        verdict = monitor_obj.on_batch_end(snap)
        if verdict is not None:
            return verdict
    return None
