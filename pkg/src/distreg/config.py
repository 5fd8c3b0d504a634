"""Run configuration for the coordinator and for data partners.

Keys use the established wrapper parameter names (``RunID``,
``dp_cd_list``, ``regr_type_cd`` ...) so existing run sheets translate
one-to-one.  Config files are JSON objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigurationError

LINEAR = 1
LOGISTIC = 2

# wrapper parameter name -> ModelSpec attribute
_SPEC_KEYS = {
    "RunID": "run_id",
    "reg_ds_in": "reg_ds_in",
    "dp_cd_list": "dp_cd_list",
    "regr_type_cd": "regr_type_cd",
    "dependent_vars": "dependent_var",
    "independent_vars": "independent_vars",
    "NOINT": "noint",
    "freq": "freq",
    "weight": "weight",
    "tbl_intial_est": "tbl_intial_est",
    "xconv": "xconv",
    "max_iter_nb": "max_iter_nb",
    "alpha": "alpha",
    "groups": "groups",
    "wait_time_min": "wait_time_min",
    "wait_time_max": "wait_time_max",
    "run_deadline": "run_deadline",
    "test_env_cd": "test_env_cd",
    "max_numb_of_grp": "max_numb_of_grp",
    "min_count_per_grp_glob": "min_count_per_grp_glob",
}


def _split_names(value: Any) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return tuple(value.split())
    return tuple(str(v) for v in value)


def _as_flag(value: Any) -> bool:
    if isinstance(value, str):
        v = value.strip().upper()
        return v in {"1", "NOINT", "TRUE", "YES", "Y"}
    return bool(value)


@dataclass(frozen=True)
class ModelSpec:
    """Everything the analysis center needs to drive one regression."""

    run_id: str
    reg_ds_in: str
    dp_cd_list: tuple[int, ...]
    regr_type_cd: int
    dependent_var: str
    independent_vars: tuple[str, ...]
    noint: bool = False
    freq: str | None = None
    weight: str | None = None
    tbl_intial_est: str | None = None
    xconv: float = 1e-4
    max_iter_nb: int = 20
    alpha: float = 0.05
    groups: int = 10
    wait_time_min: float = 3.0
    wait_time_max: float = 7200.0
    run_deadline: float = 4 * 3600.0
    test_env_cd: int = 0
    max_numb_of_grp: int = 10000
    min_count_per_grp_glob: int = 6

    def __post_init__(self):
        if self.regr_type_cd not in (LINEAR, LOGISTIC):
            raise ConfigurationError(
                f"regr_type_cd must be 1 (linear) or 2 (logistic), got {self.regr_type_cd}"
            )
        if not self.dp_cd_list:
            raise ConfigurationError("dp_cd_list must name at least one data partner")
        if len(set(self.dp_cd_list)) != len(self.dp_cd_list):
            raise ConfigurationError("dp_cd_list contains duplicates")
        for dp in self.dp_cd_list:
            if not 0 < dp < 1000:
                raise ConfigurationError(f"dp_cd {dp} must be a positive code of at most 3 digits")
        if not self.dependent_var:
            raise ConfigurationError("dependent_vars is required")
        if not self.independent_vars and self.noint:
            raise ConfigurationError("a NOINT model needs at least one independent variable")
        if len(set(v.lower() for v in self.independent_vars)) != len(self.independent_vars):
            raise ConfigurationError("independent_vars contains duplicates")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.xconv <= 0:
            raise ConfigurationError("xconv must be positive")
        if self.max_iter_nb < 1:
            raise ConfigurationError("max_iter_nb must be at least 1")
        if self.groups < 1 or self.max_numb_of_grp < 1 or self.min_count_per_grp_glob < 1:
            raise ConfigurationError("groups, max_numb_of_grp and min_count_per_grp_glob must be >= 1")
        if self.wait_time_min <= 0 or self.wait_time_max < self.wait_time_min:
            raise ConfigurationError("need 0 < wait_time_min <= wait_time_max")

    @property
    def is_logistic(self) -> bool:
        return self.regr_type_cd == LOGISTIC

    @property
    def intercept(self) -> bool:
        return not self.noint

    @property
    def coef_names(self) -> tuple[str, ...]:
        head = ("Intercept",) if self.intercept else ()
        return head + tuple(self.independent_vars)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "ModelSpec":
        unknown = set(raw) - set(_SPEC_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown run configuration keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for key, value in raw.items():
            attr = _SPEC_KEYS[key]
            if value is None or value == "":
                continue
            kw[attr] = value
        for required in ("run_id", "reg_ds_in", "dp_cd_list", "regr_type_cd", "dependent_var"):
            if required not in kw:
                inv = {v: k for k, v in _SPEC_KEYS.items()}
                raise ConfigurationError(f"missing required parameter {inv[required]}")
        try:
            kw["dp_cd_list"] = tuple(int(v) for v in _split_names(kw["dp_cd_list"]))
            kw["regr_type_cd"] = int(kw["regr_type_cd"])
            deps = _split_names(kw["dependent_var"])
            if len(deps) != 1:
                raise ConfigurationError("dependent_vars must name exactly one variable")
            kw["dependent_var"] = deps[0]
            kw["independent_vars"] = _split_names(kw.get("independent_vars"))
            if "noint" in kw:
                kw["noint"] = _as_flag(kw["noint"])
            for name in ("xconv", "alpha", "wait_time_min", "wait_time_max", "run_deadline"):
                if name in kw:
                    kw[name] = float(kw[name])
            for name in ("max_iter_nb", "groups", "test_env_cd", "max_numb_of_grp",
                         "min_count_per_grp_glob"):
                if name in kw:
                    kw[name] = int(kw[name])
            kw["run_id"] = str(kw["run_id"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid run configuration: {exc}") from exc
        return cls(**kw)

    def to_mapping(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for key, attr in _SPEC_KEYS.items():
            value = getattr(self, attr)
            if attr in ("dp_cd_list", "independent_vars"):
                value = " ".join(str(v) for v in value)
            if attr == "noint":
                value = "NOINT" if value else ""
            out[key] = value
        return out

    def with_overrides(self, **changes: Any) -> "ModelSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class WorkerConfig:
    """The three site-edited values of the partner wrapper plus paths."""

    dp_cd: int
    data_in_dir: Path
    root: Path
    request_id: str = "request_1"
    min_count_per_grp: int | None = None
    central_request_dir: Path | None = None
    wait_time_min: float = 3.0
    wait_time_max: float = 7200.0
    run_deadline: float = 4 * 3600.0

    def __post_init__(self):
        if not 0 < int(self.dp_cd) < 1000:
            raise ConfigurationError("dp_cd must be a positive integer of at most 3 digits")
        if self.min_count_per_grp is not None and self.min_count_per_grp < 1:
            raise ConfigurationError("min_count_per_grp must be >= 1")

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "WorkerConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigurationError(f"unknown worker configuration keys: {sorted(unknown)}")
        kw = dict(raw)
        try:
            kw["dp_cd"] = int(kw["dp_cd"])
            kw["data_in_dir"] = Path(kw["data_in_dir"])
            kw["root"] = Path(kw["root"])
        except KeyError as exc:
            raise ConfigurationError(f"missing worker configuration key {exc}") from exc
        if kw.get("central_request_dir"):
            kw["central_request_dir"] = Path(kw["central_request_dir"])
        if kw.get("min_count_per_grp") in ("", None):
            kw["min_count_per_grp"] = None
        else:
            kw["min_count_per_grp"] = int(kw["min_count_per_grp"])
        for name in ("wait_time_min", "wait_time_max", "run_deadline"):
            if name in kw:
                kw[name] = float(kw[name])
        return cls(**kw)


def load_json(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must contain a JSON object")
    return data
