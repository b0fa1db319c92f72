"""Dataset ingestion: CSV files and the built-in synthetic fixtures."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import DatasetError
from ..tensor import Rng, Tensor

BUILTINS = ("xor", "blobs", "blobs255", "linreg")
NORMALIZATIONS = ("none", "minmax", "standardize")

BLOBS_N = 200
BLOBS_SIGMA = 0.5
LINREG_N = 200
LINREG_NOISE = 0.1
DATA_SEED = 20201


@dataclass
class Normalization:
    method: str = "none"
    # Per-feature statistics: (min, max) for minmax, (mean, std) for standardize.
    stats: list = field(default_factory=list)


@dataclass
class Dataset:
    x: Tensor
    y: Tensor
    feature_names: list
    normalization: Normalization = field(default_factory=Normalization)
    name: str = ""

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise DatasetError(f"{self.x.shape[0]} input rows but {self.y.shape[0]} label rows")

    def __len__(self) -> int:
        return self.x.shape[0]

    def normalized(self, method: str) -> "Dataset":
        """Return a copy with features rescaled; applying a second normalization is an error."""
        if method not in NORMALIZATIONS:
            raise DatasetError(f"unknown normalization {method!r}; expected one of {NORMALIZATIONS}")
        if method == "none":
            return self
        if self.normalization.method != "none":
            raise DatasetError(f"dataset already normalized with {self.normalization.method!r}")
        flat = self.x.reshape(len(self), -1)
        if method == "minmax":
            lo = flat.min(axis=0)
            hi = flat.max(axis=0)
            span = np.where(hi > lo, hi - lo, 1.0)
            scaled = 2.0 * (flat - lo) / span - 1.0
            scaled = np.where(hi > lo, scaled, 0.0)
            stats = [(float(a), float(b)) for a, b in zip(lo, hi)]
        else:
            mu = flat.mean(axis=0)
            sd = flat.std(axis=0)
            scaled = (flat - mu) / np.where(sd > 0, sd, 1.0)
            stats = [(float(a), float(b)) for a, b in zip(mu, sd)]
        return replace(self, x=scaled.reshape(self.x.shape), normalization=Normalization(method, stats))

    def scaled_inputs(self, factor: float) -> "Dataset":
        return replace(self, x=self.x * factor)


def xor() -> Dataset:
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([[0.0], [1.0], [1.0], [0.0]])
    return Dataset(x, y, ["a", "b"], name="xor")


def blobs(seed: int = DATA_SEED) -> Dataset:
    """Two Gaussian clusters at (1, 1) [label 1] and (-1, -1) [label 0], classes alternating row by row."""
    rng = Rng(seed)
    noise = rng.normal((BLOBS_N, 2), stddev=BLOBS_SIGMA)
    labels = (np.arange(BLOBS_N) % 2 == 0).astype(np.float64)
    centers = np.where(labels[:, None] == 1.0, 1.0, -1.0) * np.ones((1, 2))
    return Dataset(centers + noise, labels[:, None], ["x1", "x2"], name="blobs")


def linreg(seed: int = DATA_SEED) -> Dataset:
    """y = 3x + N(0, 0.1^2) with x uniform on [-1, 1)."""
    rng = Rng(seed)
    x = rng.uniform((LINREG_N, 1), -1.0, 1.0)
    y = 3.0 * x + rng.normal((LINREG_N, 1), stddev=LINREG_NOISE)
    return Dataset(x, y, ["x"], name="linreg")


def ten_class(n: int = 1000, dim: int = 64, seed: int = DATA_SEED) -> Dataset:
    """Ten noisy prototype images in [0, 1]^dim with one-hot labels, classes cycling row by row.

    A small stand-in for a digit-recognition set; not exposed as a builtin.
    """
    rng = Rng(seed)
    protos = rng.uniform((10, dim))
    labels = np.arange(n) % 10
    x = np.clip(protos[labels] + rng.normal((n, dim), stddev=0.1), 0.0, 1.0)
    y = np.eye(10)[labels]
    return Dataset(x, y, [f"p{i}" for i in range(dim)], name="ten_class")


def builtin(name: str) -> Dataset:
    if name == "xor":
        return xor()
    if name == "blobs":
        return blobs()
    if name == "blobs255":
        ds = blobs().scaled_inputs(255.0)
        ds.name = "blobs255"
        return ds
    if name == "linreg":
        return linreg()
    raise DatasetError(f"unknown builtin dataset {name!r}; expected one of {BUILTINS}")


def read_csv(path: str, label_cols: Optional[Sequence[int]] = None, one_hot: bool = False) -> Dataset:
    """Parse a headered numeric CSV. ``label_cols`` are 0-based column indices (default: last column).

    Error positions are 1-based file rows (the header is row 1) and 1-based columns.
    """
    if not os.path.exists(path):
        raise DatasetError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file (a header row is required)")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    labels = list(label_cols) if label_cols is not None else [width - 1]
    for c in labels:
        if not -width <= c < width:
            raise DatasetError(f"{path}: label column {c} out of range for {width} columns")
    labels = sorted({c % width for c in labels})
    if len(labels) == width:
        raise DatasetError(f"{path}: every column is a label; no features left")
    data = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != width:
            raise DatasetError(f"{path}: row {r} has {len(row)} cells, header has {width}")
        values = []
        for c, cell in enumerate(row, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise DatasetError(f"{path}: non-numeric value {cell.strip()!r} at row {r} col {c}") from None
        data.append(values)
    if not data:
        raise DatasetError(f"{path}: no data rows")
    table = np.array(data)
    features = [c for c in range(width) if c not in labels]
    x = table[:, features]
    y = table[:, labels]
    if one_hot:
        y = _one_hot(y, path)
    return Dataset(x, y, [header[c] for c in features], name=os.path.basename(path))


def _one_hot(y: Tensor, path: str) -> Tensor:
    if y.shape[1] != 1:
        raise DatasetError(f"{path}: one-hot encoding needs exactly one label column, got {y.shape[1]}")
    classes = np.unique(y[:, 0])
    idx = np.searchsorted(classes, y[:, 0])
    out = np.zeros((y.shape[0], classes.size))
    out[np.arange(y.shape[0]), idx] = 1.0
    return out


def load_dataset(source: str, label_cols: Optional[Sequence[int]] = None, one_hot: bool = False,
                 normalize: str = "none") -> Dataset:
    """Load ``builtin:<name>`` (or a bare builtin name) or a CSV path, then optionally normalize."""
    name = source[len("builtin:"):] if source.startswith("builtin:") else source
    if name in BUILTINS and not os.path.exists(source):
        ds = builtin(name)
        if one_hot:
            ds = replace(ds, y=_one_hot(ds.y, name))
    elif source.startswith("builtin:"):
        raise DatasetError(f"unknown builtin dataset {name!r}; expected one of {BUILTINS}")
    else:
        ds = read_csv(source, label_cols, one_hot)
    return ds.normalized(normalize)
