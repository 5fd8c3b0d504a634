"""Deterministic CSV encoding for everything that crosses the wire or lands in msoc.

Floats are written with 17 significant digits so every IEEE double
round-trips exactly; output bytes depend only on the values.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Any, Iterable, Sequence


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        if x == 0.0:
            # normalise -0.0
            return "0"
        return format(x, ".17g")
    return str(value)


def parse_float(text: str) -> float:
    if text == "":
        return math.nan
    return float(text)


def encode_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def decode_csv(data: bytes) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    rows = list(reader)
    if not rows:
        raise ValueError("empty CSV payload")
    return rows[0], [r for r in rows[1:] if r]


def write_bytes(path: Path, data: bytes) -> None:
    """Write through a temporary name so readers never see a torn file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.part")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
    tmp.replace(path)
