"""Seeded-bug operators over model spec documents.

Every operator is pure: it deep-copies the input document, edits the copy and
returns it together with a :class:`GroundTruth` record describing where a
fault localiser is expected to point.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

from .. import objectives
from ..errors import MutationError
from .spec import layer_type, validate_model_spec

KINDS = ("wrong_loss", "drop_activation", "wrong_final_activation", "scale_lr", "zero_lr", "denormalize_input")
_PARAMETERIZED = ("Dense", "Conv2D")
_DEFAULT_LR = {"sgd": objectives.SGD().lr, "adam": objectives.Adam().lr}


@dataclass(frozen=True)
class GroundTruth:
    detectable: bool
    phases: tuple
    layer: Optional[int] = None
    code: Optional[str] = None

    def to_json(self) -> dict:
        return {"detectable": self.detectable, "phases": list(self.phases), "layer": self.layer, "code": self.code}


@dataclass(frozen=True)
class Mutation:
    kind: str
    arg: object = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MutationError(f"unknown mutation {self.kind!r}; expected one of {', '.join(KINDS)}")

    def label(self) -> str:
        return self.kind if self.arg is None else f"{self.kind}={self.arg}"


def parse_op(text: str) -> Mutation:
    """Parse the CLI form ``kind[=arg]``, e.g. ``scale_lr=100`` or ``wrong_loss=mse``."""
    kind, sep, raw = text.partition("=")
    kind = kind.strip()
    if kind not in KINDS:
        raise MutationError(f"unknown mutation {kind!r}; expected one of {', '.join(KINDS)}")
    if not sep:
        return Mutation(kind)
    raw = raw.strip()
    if kind in ("scale_lr", "denormalize_input"):
        try:
            return Mutation(kind, float(raw))
        except ValueError:
            raise MutationError(f"{kind} needs a numeric factor, got {raw!r}") from None
    if kind == "drop_activation":
        try:
            return Mutation(kind, int(raw))
        except ValueError:
            raise MutationError(f"drop_activation needs a layer number, got {raw!r}") from None
    if kind == "zero_lr":
        raise MutationError("zero_lr takes no argument")
    return Mutation(kind, raw)


def _parameterized_entries(doc: dict) -> list:
    return [e for e in doc["layers"] if layer_type(e) in _PARAMETERIZED]


def _optimizer_obj(doc: dict) -> dict:
    opt = doc["compile"]["optimizer"]
    if isinstance(opt, str):
        opt = {"type": opt}
        doc["compile"]["optimizer"] = opt
    return opt


def _lr(opt: dict) -> float:
    return float(opt.get("lr", _DEFAULT_LR[opt["type"].lower()]))


def mutate(doc: dict, m: Mutation) -> tuple[dict, GroundTruth]:
    """Apply ``m`` to a copy of ``doc``. Raises MutationError when ``m`` cannot apply."""
    validate_model_spec(doc)
    out = copy.deepcopy(doc)
    dense = _parameterized_entries(out)
    last = len(dense)

    if m.kind == "wrong_loss":
        if m.arg is None:
            raise MutationError("wrong_loss needs a target loss, e.g. wrong_loss=mse")
        to = objectives.canonical_loss(str(m.arg))
        if objectives.canonical_loss(out["compile"]["loss"]) == to:
            raise MutationError(f"the model already uses {to}")
        out["compile"]["loss"] = to
        truth = GroundTruth(True, ("backward", "metric"))

    elif m.kind == "drop_activation":
        target = last if m.arg is None else int(m.arg)
        if not 1 <= target <= last:
            raise MutationError(f"layer {target} does not exist; the model has {last} parameterized layer(s)")
        entry = dense[target - 1]
        if entry.get("activation", "linear") == "linear":
            raise MutationError(f"layer {target} has no activation to drop")
        del entry["activation"]
        truth = GroundTruth(True, ("forward", "backward"), target)

    elif m.kind == "wrong_final_activation":
        if m.arg is None:
            raise MutationError("wrong_final_activation needs a target, e.g. wrong_final_activation=softmax")
        entry = dense[-1]
        to = str(m.arg)
        if entry.get("activation", "linear") == to:
            raise MutationError(f"the last layer already uses {to}")
        entry["activation"] = to
        truth = GroundTruth(True, ("forward", "backward"), last)

    elif m.kind == "scale_lr":
        factor = 10.0 if m.arg is None else float(m.arg)
        if not factor > 0 or factor == 1.0:
            raise MutationError(f"scale factor must be positive and not 1, got {factor}")
        opt = _optimizer_obj(out)
        opt["lr"] = _lr(opt) * factor
        truth = GroundTruth(True, ("forward", "backward"))

    elif m.kind == "zero_lr":
        opt = _optimizer_obj(out)
        if "lr" in opt and float(opt["lr"]) == 0.0:
            raise MutationError("the learning rate is already 0")
        opt["lr"] = 0.0
        truth = GroundTruth(True, ("backward",), last, "EBW")

    else:  # denormalize_input
        factor = 255.0 if m.arg is None else float(m.arg)
        if not factor > 0 or factor == 1.0:
            raise MutationError(f"scale factor must be positive and not 1, got {factor}")
        out["fit"]["input_scale"] = float(out["fit"].get("input_scale", 1.0)) * factor
        truth = GroundTruth(True, ("forward", "metric"), 1)

    validate_model_spec(out)
    return out, truth
