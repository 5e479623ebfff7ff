"""Deterministic text formats shared by reports and the experiment runner."""

from __future__ import annotations

import math
from typing import Iterable, Sequence


def format_number(value) -> str:
    """Shortest round-trip decimal for floats, plain digits for ints, '' for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int) or (hasattr(value, "dtype") and value.dtype.kind in "iu"):
        return str(int(value))
    if isinstance(value, str):
        return value
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def format_controls(values: Iterable[float]) -> str:
    """One line of comma-separated decimals."""
    return ",".join(format_number(float(v)) for v in values)


def parse_controls(text: str) -> list[float]:
    return [float(tok) for tok in text.strip().split(",") if tok]
