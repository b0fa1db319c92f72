"""Benchmark runner: correct specs and seeded mutants against each monitor.

Each (case, monitor) pair trains a fresh model with only that monitor
attached. For a buggy case the monitor *detects* (IB) when it stops with a
fault verdict, and *localizes* (FL) when additionally the verdict names a
layer whose phase (and, when the ground truth has one, layer and code) match
the constructed ground truth. For a correct case IB means the run ended CM;
FL does not apply.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..detector import DeepLocalize, EarlyStopping, TerminateOnNaN, VerdictCode
from ..engine import fit
from ..errors import DnnFaultError
from .data import load_dataset, ten_class
from .mutations import GroundTruth, mutate, parse_op
from .spec import load_spec, parse_model_spec

MONITORS = ("deeplocalize", "terminate-on-nan", "early-stop-loss", "early-stop-acc")
CSV_COLUMNS = ("case_id", "mutation", "monitor", "detected", "localized", "code", "layer", "phase",
               "epoch", "iteration", "error")


def make_monitor(name: str):
    if name == "deeplocalize":
        return DeepLocalize()
    if name == "terminate-on-nan":
        return TerminateOnNaN()
    if name == "early-stop-loss":
        return EarlyStopping("loss")
    if name == "early-stop-acc":
        return EarlyStopping("accuracy")
    raise DnnFaultError(f"unknown monitor {name!r}; expected one of {', '.join(MONITORS)}")


# -- canonical suite -----------------------------------------------------------

XOR_SPEC = {
    "seed": 1,
    "layers": [
        {"type": "Dense", "units": 4, "input_dim": 2, "activation": "relu"},
        {"type": "Dense", "units": 1, "activation": "sigmoid"},
    ],
    "compile": {"loss": "binary_crossentropy", "optimizer": {"type": "SGD", "lr": 0.5}, "metrics": ["accuracy"]},
    "fit": {"batch_size": 4, "epochs": 2000},
}

BLOBS_SPEC = {
    "seed": 1,
    "layers": [
        {"type": "Dense", "units": 8, "input_dim": 2, "activation": "relu"},
        {"type": "Dense", "units": 1, "activation": "sigmoid"},
    ],
    "compile": {"loss": "binary_crossentropy", "optimizer": {"type": "SGD", "lr": 0.1}, "metrics": ["accuracy"]},
    "fit": {"batch_size": 4, "epochs": 2},
}

LINREG_SPEC = {
    "seed": 1,
    "layers": [{"type": "Dense", "units": 1, "input_dim": 1}],
    "compile": {"loss": "mse", "optimizer": {"type": "SGD", "lr": 0.1}},
    "fit": {"batch_size": 200, "epochs": 200},
}

BASES = {
    "xor": (XOR_SPEC, "builtin:xor"),
    "blobs": (BLOBS_SPEC, "builtin:blobs"),
    "linreg": (LINREG_SPEC, "builtin:linreg"),
}

CANONICAL_MUTANTS = (
    ("xor", "drop_activation=2"),
    ("xor", "wrong_final_activation=relu"),
    ("blobs", "zero_lr"),
    ("blobs", "denormalize_input=255"),
    ("blobs", "scale_lr=100"),
    ("blobs", "wrong_final_activation=softmax"),
    ("blobs", "drop_activation=2"),
    ("linreg", "wrong_loss=categorical_crossentropy"),
    ("linreg", "wrong_final_activation=softmax"),
)


@dataclass
class Case:
    case_id: str
    spec: Optional[dict]
    data: str
    mutation: Optional[str] = None
    truth: Optional[GroundTruth] = None
    label_cols: Optional[list] = None
    one_hot: bool = False
    normalize: str = "none"
    error: Optional[str] = None

    @property
    def buggy(self) -> bool:
        return self.mutation is not None


def _case_id(base: str, op: Optional[str]) -> str:
    if op is None:
        return f"{base}-correct"
    return f"{base}-{op.replace('=', '-')}"


def make_case(base_id: str, spec: dict, data: str, op: Optional[str] = None, **data_opts) -> Case:
    """Build a case, applying ``op`` when given. Mutation failures become a per-case error."""
    case_id = _case_id(base_id, op)
    if op is None:
        return Case(case_id, spec, data, **data_opts)
    try:
        mutated, truth = mutate(spec, parse_op(op))
    except DnnFaultError as exc:
        return Case(case_id, None, data, op, None, error=f"{type(exc).__name__}: {exc}", **data_opts)
    return Case(case_id, mutated, data, op, truth, **data_opts)


def canonical_suite() -> list:
    """The 12 shipped cases: three correct specs plus nine mutants."""
    cases = [make_case(name, spec, data) for name, (spec, data) in BASES.items()]
    for base, op in CANONICAL_MUTANTS:
        spec, data = BASES[base]
        cases.append(make_case(base, spec, data, op))
    return cases


def load_suite(path: str) -> tuple[list, tuple]:
    """Read a suite file. Returns (cases, monitors).

    The file is either ``{"suite": "builtin:canonical"}`` or
    ``{"cases": [{"id", "model", "data", "mutation"?, "label_cols"?, "one_hot"?, "normalize"?}],
    "monitors"?: [...]}``. ``model`` may be an inline spec or a path relative to the suite file.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DnnFaultError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DnnFaultError(f"{path}: a suite must be a JSON object")
    monitors = tuple(doc.get("monitors", MONITORS))
    for m in monitors:
        if m not in MONITORS:
            raise DnnFaultError(f"{path}: unknown monitor {m!r}")
    if doc.get("suite") == "builtin:canonical":
        return canonical_suite(), monitors
    if "suite" in doc:
        raise DnnFaultError(f"{path}: unknown suite {doc['suite']!r}")
    root = os.path.dirname(os.path.abspath(path))
    cases = []
    for i, entry in enumerate(doc.get("cases", [])):
        case_id = str(entry.get("id", f"case-{i}"))
        data = entry.get("data", "")
        if data and not data.startswith("builtin:") and not os.path.isabs(data):
            data = os.path.join(root, data)
        opts = {k: entry[k] for k in ("label_cols", "one_hot", "normalize") if k in entry}
        model = entry.get("model")
        try:
            if isinstance(model, str):
                model = load_spec(model if os.path.isabs(model) else os.path.join(root, model))
            if not isinstance(model, dict):
                raise DnnFaultError("case has no model spec")
        except (DnnFaultError, OSError) as exc:
            cases.append(Case(case_id, None, data, entry.get("mutation"), error=f"{type(exc).__name__}: {exc}", **opts))
            continue
        case = make_case(case_id, model, data, entry.get("mutation"), **opts)
        case.case_id = case_id
        cases.append(case)
    return cases, monitors


# -- running ---------------------------------------------------------------------


@dataclass
class BenchRow:
    case_id: str
    mutation: str
    monitor: str
    detected: bool
    localized: Optional[bool]
    code: Optional[str]
    layer: Optional[int]
    phase: Optional[str]
    epoch: Optional[int]
    iteration: Optional[int]
    elapsed_seconds: float
    error: str = ""

    def csv_fields(self) -> list:
        def cell(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "1" if v else "0"
            return str(v)

        return [cell(getattr(self, c)) for c in CSV_COLUMNS]


@dataclass
class Aggregate:
    monitor: str
    cases: int = 0
    buggy: int = 0
    detected: int = 0
    localized: int = 0
    correct_passed: int = 0
    errors: int = 0


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return buf.getvalue()

    def to_table(self) -> str:
        header = ["case", "monitor", "IB", "FL", "code", "layer", "phase", "epoch", "iter", "sec"]
        body = []
        for r in self.rows:
            body.append([
                r.case_id, r.monitor, "yes" if r.detected else "no",
                "-" if r.localized is None else ("yes" if r.localized else "no"),
                r.code or ("ERROR" if r.error else ""), "" if r.layer is None else str(r.layer),
                r.phase or "", "" if r.epoch is None else str(r.epoch),
                "" if r.iteration is None else str(r.iteration), f"{r.elapsed_seconds:.3f}",
            ])
        widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for b in body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip())
        if self.aggregates:
            lines.append("")
            for agg in self.aggregates.values():
                lines.append(
                    f"{agg.monitor}: buggy IB {agg.detected}/{agg.buggy}, FL {agg.localized}/{agg.buggy}; "
                    f"correct CM {agg.correct_passed}/{agg.cases - agg.buggy}; errors {agg.errors}"
                )
        return "\n".join(lines) + "\n"


def localized(truth: Optional[GroundTruth], verdict) -> bool:
    if truth is None or not verdict.is_fault or verdict.layer is None:
        return False
    if verdict.phase not in truth.phases:
        return False
    if truth.layer is not None and verdict.layer != truth.layer:
        return False
    if truth.code is not None and verdict.code.value != truth.code:
        return False
    return True


def run_case(case: Case, monitor: str) -> BenchRow:
    label = case.mutation or ""
    if case.error is not None:
        return BenchRow(case.case_id, label, monitor, False, False if case.buggy else None,
                        None, None, None, None, None, 0.0, case.error)
    start = time.perf_counter()
    try:
        model, config = parse_model_spec(case.spec)
        ds = load_dataset(case.data, case.label_cols, case.one_hot, case.normalize)
        outcome = fit(model, ds.x, ds.y, config, [make_monitor(monitor)])
    except DnnFaultError as exc:
        return BenchRow(case.case_id, label, monitor, False, False if case.buggy else None,
                        None, None, None, None, None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")
    v = outcome.verdict
    if case.buggy:
        detected = v.is_fault
        fl = detected and localized(case.truth, v)
    else:
        detected = v.code is VerdictCode.CM
        fl = None
    return BenchRow(case.case_id, label, monitor, detected, fl, v.code.value, v.layer, v.phase,
                    v.epoch, v.iteration, outcome.elapsed_seconds)


def run_bench(cases: Sequence[Case], monitors: Sequence[str] = MONITORS) -> BenchReport:
    """Run every case under every monitor. Rows are sorted by case id, then monitor order."""
    for m in monitors:
        make_monitor(m)
    order = {m: i for i, m in enumerate(monitors)}
    rows = [run_case(c, m) for c in cases for m in monitors]
    rows.sort(key=lambda r: (r.case_id, order[r.monitor]))
    aggregates = {m: Aggregate(m) for m in monitors}
    buggy_ids = {c.case_id for c in cases if c.buggy}
    for r in rows:
        agg = aggregates[r.monitor]
        agg.cases += 1
        if r.error:
            agg.errors += 1
        if r.case_id in buggy_ids:
            agg.buggy += 1
            agg.detected += r.detected
            agg.localized += bool(r.localized)
        else:
            agg.correct_passed += r.detected
    return BenchReport(rows, aggregates)


# -- motivating example ---------------------------------------------------------------

MOTIVATING_SPEC = {
    "seed": 0,
    "layers": [
        {"type": "Dense", "units": 30, "input_dim": 64,
         "kernel_initializer": {"type": "RandomNormal", "stddev": 1.0},
         "bias_initializer": {"type": "RandomNormal", "stddev": 1.0}},
        {"type": "Dense", "units": 10,
         "kernel_initializer": {"type": "RandomNormal", "stddev": 1.0},
         "bias_initializer": {"type": "RandomNormal", "stddev": 1.0}},
    ],
    "compile": {"loss": "mean_squared_error", "optimizer": {"type": "SGD", "lr": 3.0}, "metrics": ["accuracy"]},
    "fit": {"batch_size": 10, "epochs": 30},
}


def run_motivating_example(monitor: str = "deeplocalize"):
    """Two activation-free dense layers trained with MSE on ten classes at lr 3.0."""
    model, config = parse_model_spec(MOTIVATING_SPEC)
    ds = ten_class()
    return fit(model, ds.x, ds.y, config, [make_monitor(monitor)])
