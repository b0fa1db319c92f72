"""Strict-JSON encoding of floats that may be NaN or infinite."""

from __future__ import annotations

import json
import math
from typing import Any


def number(x: float | None) -> Any:
    """Finite floats pass through; NaN and +/-Inf become the strings "NaN", "Infinity", "-Infinity"."""
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return x


def dumps(obj: Any, **kwargs) -> str:
    return json.dumps(obj, allow_nan=False, **kwargs)
