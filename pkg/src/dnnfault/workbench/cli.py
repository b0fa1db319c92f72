"""Command-line entry point: ``dnnfault train|mutate|bench``.

Exit codes: 0 for a CM verdict or a completed bench, 2 when ``train`` ends
with a fault verdict, 1 for usage and I/O errors.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
from typing import Optional, Sequence

from .. import _json
from ..engine import fit
from ..errors import DnnFaultError
from ..probes import TraceWriter
from .bench import MONITORS, load_suite, make_monitor, run_bench
from .data import NORMALIZATIONS, load_dataset
from .mutations import mutate, parse_op
from .spec import load_spec, parse_model_spec, serialize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAULT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dnnfault", description="Fault localisation for small feed-forward networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train a model spec with monitors attached")
    train.add_argument("--model", required=True, help="model spec JSON file")
    train.add_argument("--data", required=True, help="CSV path or builtin:<name>")
    train.add_argument("--label-cols", type=int, nargs="+", default=None,
                       help="0-based label column indices (default: last column)")
    train.add_argument("--one-hot", action="store_true")
    train.add_argument("--normalize", choices=NORMALIZATIONS, default="none")
    train.add_argument("--monitor", choices=("none",) + MONITORS + ("all",), default="deeplocalize")
    train.add_argument("--seed", type=int, default=None, help="override the seed stored in the model file")
    train.add_argument("--out", help="write the report JSON here")
    train.add_argument("--trace-out", help="write per-batch JSONL summaries here")

    mut = sub.add_parser("mutate", help="apply a seeded bug to a model spec")
    mut.add_argument("--model", required=True)
    mut.add_argument("--op", required=True, help="mutation[=arg], e.g. scale_lr=100")
    mut.add_argument("--out", required=True)

    bench = sub.add_parser("bench", help="run a benchmark suite")
    bench.add_argument("--suite", required=True, help="suite JSON file")
    bench.add_argument("--out", required=True, help="results CSV")
    return parser


def _monitors(name: str, task: str) -> list:
    if name == "none":
        return []
    if name == "all":
        # Accuracy-based early stopping cannot run on a regression task.
        return [make_monitor(m) for m in MONITORS if not (m == "early-stop-acc" and task == "none")]
    return [make_monitor(name)]


def cmd_train(args) -> int:
    model, config = parse_model_spec(load_spec(args.model), args.seed)
    ds = load_dataset(args.data, args.label_cols, args.one_hot, args.normalize)
    observers = _monitors(args.monitor, model.task)
    with contextlib.ExitStack() as stack:
        if args.trace_out:
            observers.insert(0, TraceWriter(stack.enter_context(open(args.trace_out, "w", encoding="utf-8"))))
        outcome = fit(model, ds.x, ds.y, config, observers)
    report = outcome.verdict.to_json()
    report.update({
        "monitor": args.monitor,
        "final_loss": _json.number(outcome.final_loss),
        "final_accuracy": _json.number(outcome.final_accuracy),
        "batches_executed": outcome.batches_executed,
        "loss_history_length": len(outcome.epoch_loss),
        "accuracy_history_length": len([a for a in outcome.epoch_accuracy if a is not None]),
    })
    text = _json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_FAULT if outcome.verdict.is_fault else EXIT_OK


def cmd_mutate(args) -> int:
    spec, truth = mutate(load_spec(args.model), parse_op(args.op))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(serialize(spec))
    sys.stdout.write(json.dumps({"mutation": args.op, "ground_truth": truth.to_json()}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    cases, monitors = load_suite(args.suite)
    report = run_bench(cases, monitors)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    sys.stdout.write(report.to_table())
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    handler = {"train": cmd_train, "mutate": cmd_mutate, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except (DnnFaultError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
