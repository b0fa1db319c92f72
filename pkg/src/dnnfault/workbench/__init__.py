"""User-facing tooling: model specs, datasets, mutations, the benchmark and the CLI."""

from .bench import BenchReport, Case, canonical_suite, load_suite, run_bench, run_motivating_example
from .data import Dataset, load_dataset, read_csv
from .mutations import GroundTruth, Mutation, mutate, parse_op
from .spec import parse_model_spec, serialize, validate_model_spec

__all__ = [
    "BenchReport", "Case", "canonical_suite", "load_suite", "run_bench", "run_motivating_example",
    "Dataset", "load_dataset", "read_csv",
    "GroundTruth", "Mutation", "mutate", "parse_op",
    "parse_model_spec", "serialize", "validate_model_spec",
]
