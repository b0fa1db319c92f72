"""Dense float64 arrays, a portable seeded PRNG, and the statistics ANA reads.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order; rank-4 tensors are NHWC. NaN and Inf are never trapped here: the
detector is the only place that looks for them.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np

from .errors import ContractError, ShapeError

Tensor = np.ndarray
Scalar = Union[int, float]

MAX_RANK = 4

_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1


def as_tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    """Copy ``values`` into a fresh contiguous float64 tensor of rank 1-4."""
    t = np.array(values, dtype=np.float64, order="C", copy=True)
    if shape is not None:
        t = t.reshape(tuple(shape))
    if not 1 <= t.ndim <= MAX_RANK:
        raise ShapeError(f"tensors must have rank 1..{MAX_RANK}, got shape {t.shape}")
    return t


def zeros(shape: Sequence[int]) -> Tensor:
    return np.zeros(tuple(shape), dtype=np.float64)


def _require_nonempty(t: Tensor, op: str) -> None:
    if t.size == 0:
        raise ContractError(f"{op}() of an empty tensor is undefined")


def mean(t: Tensor) -> float:
    """Arithmetic mean over every element. NaN/Inf propagate."""
    t = np.asarray(t, dtype=np.float64)
    _require_nonempty(t, "mean")
    with np.errstate(all="ignore"):
        return float(np.mean(t))


def std(t: Tensor) -> float:
    """Population standard deviation (divides by n). NaN/Inf propagate."""
    t = np.asarray(t, dtype=np.float64)
    _require_nonempty(t, "std")
    with np.errstate(all="ignore"):
        return float(np.std(t))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(all="ignore"):
        return a @ b


_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "scale": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Tensor | Scalar) -> Tensor:
    """Apply ``op`` (add, sub, mul, div, scale) element by element.

    ``b`` is either a tensor of exactly ``a``'s shape or a scalar; no other
    broadcasting is performed. Division by zero yields IEEE Inf/NaN.
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    if op == "scale" and not np.isscalar(b):
        raise ContractError("scale takes a scalar right operand")
    if not np.isscalar(b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape != a.shape:
            raise ShapeError(f"elementwise {op}: shape mismatch {a.shape} vs {b.shape}")
    with np.errstate(all="ignore"):
        return fn(np.asarray(a, dtype=np.float64), b)


def is_finite_scalar(x: float | None) -> bool:
    return x is not None and math.isfinite(x)


class Rng:
    """SplitMix64 generator with bit-identical streams on every platform.

    The scalar path (:meth:`next_u64`) and the vectorised path
    (:meth:`u64_array`) share one state and produce the same sequence.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    def __repr__(self) -> str:
        return f"Rng(state={self.state:#018x})"

    def copy(self) -> "Rng":
        return Rng(self.state)

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN_GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array (advances the state by n)."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        # uint64 array arithmetic wraps modulo 2**64, which is exactly what SplitMix64 needs.
        z = np.uint64(self.state) + steps * np.uint64(_GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN_GAMMA) & _MASK64
        return z

    def uniform(self, shape: Sequence[int] | int = (), low: float = 0.0, high: float = 1.0):
        """Uniform draws in ``[low, high)`` built from the top 53 bits of each output."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        out = low + (high - low) * u
        return float(out[0]) if not shape else out.reshape(shape)

    def normal(self, shape: Sequence[int] | int = (), mean: float = 0.0, stddev: float = 1.0):
        """Gaussian draws via Box-Muller; each pair of uniforms yields two variates."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        # 1 - u1 lies in (0, 1], so the log is always finite.
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1).reshape(-1)[:n]
        out = mean + stddev * z
        return float(out[0]) if not shape else out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` driven by this stream."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
