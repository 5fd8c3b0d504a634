"""Bundled example data."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

BOSTON_SIZES = (172, 182, 152)
BOSTON_COVARIATES = ("crim", "indus", "dis")
HIGH_VALUE_THRESHOLD = 21.0


def boston_path() -> Path:
    """Boston housing subset: crim, indus, dis, medv and ``medv_high_flag``.

    ``medv_high_flag`` is 1 when ``medv >= 21`` (median value of at least
    $21,000) and 0 otherwise.
    """
    return Path(str(resources.files("distreg") / "data" / "boston_housing.csv"))


BUILTIN = {"boston": boston_path}


def resolve(name_or_path: str | Path) -> Path:
    """Map a built-in dataset name to its file; pass other paths through."""
    key = str(name_or_path)
    if key in BUILTIN:
        return BUILTIN[key]()
    return Path(name_or_path)
