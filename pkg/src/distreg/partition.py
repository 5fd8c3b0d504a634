"""Split a pooled CSV into per-partner analytic datasets.

Rows are shuffled with numpy's ``Generator(PCG64(seed))``, whose output
stream is specified by the algorithm and identical on every platform.
Each part keeps its rows in original file order.  Optional site dummies
``dummy_dp_var2 .. dummy_dp_varK`` use partner 1 as the reference.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .tables import write_bytes


def split_indices(n: int, sizes: Sequence[int] | None = None, k: int | None = None,
                  seed: int = 0, shuffle: bool = True) -> list[np.ndarray]:
    """Row indices for each part, in ascending order within a part."""
    if sizes is None:
        if k is None or k < 1:
            raise ConfigurationError("give either part sizes or a positive number of parts")
        sizes = [len(a) for a in np.array_split(np.arange(n), k)]
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ConfigurationError(f"every part needs at least one row, got sizes {sizes}")
    if sum(sizes) != n:
        raise ConfigurationError(f"part sizes {sizes} sum to {sum(sizes)}, dataset has {n} rows")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n) if shuffle else np.arange(n)
    bounds = np.cumsum([0, *sizes])
    return [np.sort(order[bounds[i]:bounds[i + 1]]) for i in range(len(sizes))]


def dummy_names(k: int) -> list[str]:
    return [f"dummy_dp_var{j}" for j in range(2, k + 1)]


def _encode(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def partition_csv(source: str | Path, out_dir: str | Path, name: str,
                  sizes: Sequence[int] | None = None, k: int | None = None, seed: int = 0,
                  shuffle: bool = True, dummies: bool = False, pooled: bool = True) -> list[Path]:
    """Write ``<name>_<k>.csv`` per part (and ``<name>.csv`` with every row).

    The pooled file lists the parts one after another and carries the
    same dummy columns, so a pooled fit sees exactly the partitioned data.
    """
    try:
        with open(source, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"cannot read {source}: {exc}") from exc
    if not rows:
        raise DataError(f"{source} is empty")
    header, body = rows[0], rows[1:]
    parts = split_indices(len(body), sizes, k, seed, shuffle)
    n_parts = len(parts)
    extra = dummy_names(n_parts) if dummies else []
    clash = set(h.lower() for h in header) & set(extra)
    if clash:
        raise ConfigurationError(f"input already has columns {sorted(clash)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    everything = []
    for j, idx in enumerate(parts, start=1):
        flags = ["1" if j == d else "0" for d in range(2, n_parts + 1)] if dummies else []
        part_rows = [body[i] + flags for i in idx]
        everything.extend(part_rows)
        path = out_dir / f"{name}_{j}.csv"
        write_bytes(path, _encode(header + extra, part_rows))
        written.append(path)
    if pooled:
        path = out_dir / f"{name}.csv"
        write_bytes(path, _encode(header + extra, everything))
        written.append(path)
    return written
