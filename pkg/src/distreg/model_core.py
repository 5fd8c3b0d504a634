"""Per-record GLM arithmetic run at the data partners.

The functions are vectorised over records: a ``Design`` holds the whole
local design matrix rather than a list of row objects, and the family
functions accept scalars or arrays alike.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import ModelSpec
from .errors import ConfigurationError, DataError, DomainError, InsufficientDataError, InvalidDispersionError
from .solver import SscpMatrix

MU_CLAMP = 1e-10
WORKING_OUTCOME = "_Y_"


@dataclass(frozen=True)
class FamilySpec:
    kind: str  # "linear" | "logistic"

    def __post_init__(self):
        if self.kind not in ("linear", "logistic"):
            raise ValueError(f"unsupported family {self.kind!r}")

    @property
    def is_logistic(self) -> bool:
        return self.kind == "logistic"

    @property
    def dispersion_mode(self) -> str:
        return "fixed_one" if self.is_logistic else "estimated"

    @classmethod
    def from_code(cls, regr_type_cd: int) -> "FamilySpec":
        return cls("logistic" if int(regr_type_cd) == 2 else "linear")


LINEAR = FamilySpec("linear")
LOGISTIC = FamilySpec("logistic")


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def family_eval(family: FamilySpec, eta):
    """Mean, mean derivative and variance at linear predictor ``eta``.

    The logistic mean is clamped to ``[1e-10, 1 - 1e-10]``; for the linear
    family the variance is reported as the placeholder 1 (the dispersion
    is estimated later from the residual sum of squares).
    """
    scalar = np.ndim(eta) == 0
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if not np.all(np.isfinite(eta)):
        raise DomainError("linear predictor must be finite")
    if family.is_logistic:
        mu = np.clip(_sigmoid(eta), MU_CLAMP, 1.0 - MU_CLAMP)
        mu_prime = mu * (1.0 - mu)
        v = mu_prime.copy()
    else:
        mu = eta.copy()
        mu_prime = np.ones_like(eta)
        v = np.ones_like(eta)
    if scalar:
        return float(mu[0]), float(mu_prime[0]), float(v[0])
    return mu, mu_prime, v


@dataclass
class AnalyticDataset:
    """Columns of one partner's analytic table, keyed by lower-cased name."""

    columns: dict[str, np.ndarray]
    partner_id: int = 0
    n_rows: int = 0

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name.lower()]
        except KeyError:
            raise ConfigurationError(f"variable {name!r} not found in dataset") from None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Sequence[float]], partner_id: int = 0) -> "AnalyticDataset":
        cols = {k.lower(): np.asarray(v, dtype=float) for k, v in data.items()}
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise DataError("columns have different lengths")
        return cls(cols, partner_id, lengths.pop() if lengths else 0)


def read_dataset(path: str | Path, partner_id: int = 0, needed: Sequence[str] | None = None) -> AnalyticDataset:
    """Read a CSV with a header row.

    Only the ``needed`` columns (all columns when ``None``) must be
    numeric; a blank or non-numeric cell in one of them is a data error.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read analytic dataset {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"analytic dataset {path} is not valid UTF-8 text") from exc
    if not rows:
        raise DataError(f"analytic dataset {path} is empty")
    header = [h.strip().lower() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise InsufficientDataError(f"analytic dataset {path.name} has no records")
    wanted = [h.lower() for h in needed] if needed is not None else header
    cols: dict[str, np.ndarray] = {}
    for name in wanted:
        if name not in header:
            raise ConfigurationError(f"variable {name!r} not found in dataset {path.name}")
        j = header.index(name)
        values = np.empty(len(body))
        for i, row in enumerate(body):
            if len(row) != len(header):
                raise DataError(f"{path.name}: row {i} has {len(row)} fields, expected {len(header)}")
            cell = row[j].strip()
            try:
                values[i] = float(cell)
            except ValueError:
                raise DataError(f"{path.name}: row {i}, column {name!r}: non-numeric value {cell!r}") from None
        cols[name] = values
    return AnalyticDataset(cols, partner_id, len(body))


@dataclass
class Design:
    """Local design matrix ``Z = 1 || X`` with outcome and weights."""

    labels: tuple[str, ...]
    z: np.ndarray
    y: np.ndarray
    freq: np.ndarray
    weight: np.ndarray

    @property
    def effective_weight(self) -> np.ndarray:
        return self.weight * self.freq

    @property
    def n_obs(self) -> float:
        total = float(np.sum(self.freq))
        return int(total) if total == int(total) else total

    def __len__(self) -> int:
        return len(self.y)


def build_design(data: AnalyticDataset, spec: ModelSpec) -> Design:
    used = list(spec.independent_vars) + [spec.dependent_var]
    if spec.freq:
        used.append(spec.freq)
    if spec.weight:
        used.append(spec.weight)
    arrays = {name: data.column(name) for name in used}
    for name, arr in arrays.items():
        bad = ~np.isfinite(arr)
        if bad.any():
            raise DataError(f"missing or non-finite value at row {int(np.argmax(bad))}, column {name!r}")
    n = data.n_rows
    x = [arrays[v] for v in spec.independent_vars]
    if spec.intercept:
        x = [np.ones(n)] + x
    z = np.column_stack(x) if x else np.empty((n, 0))
    y = arrays[spec.dependent_var]
    freq = arrays[spec.freq] if spec.freq else np.ones(n)
    weight = arrays[spec.weight] if spec.weight else np.ones(n)
    if np.any(freq < 0) or np.any(freq != np.floor(freq)):
        raise DataError(f"frequency variable {spec.freq!r} must hold non-negative integers")
    if np.any(weight < 0):
        raise DataError(f"weight variable {spec.weight!r} must be non-negative")
    if spec.is_logistic and not np.all((y == 0) | (y == 1)):
        i = int(np.argmax((y != 0) & (y != 1)))
        raise DataError(f"logistic outcome {spec.dependent_var!r} must be 0/1 (row {i} is {y[i]!r})")
    return Design(spec.coef_names, z, y, freq, weight)


@dataclass
class WorkingRecords:
    eta: np.ndarray
    mu: np.ndarray
    mu_prime: np.ndarray
    v: np.ndarray
    y_tilde: np.ndarray
    w_tilde: np.ndarray
    degenerate: np.ndarray


def working_transform(family: FamilySpec, design: Design, beta) -> WorkingRecords:
    """Working response and weight for one IRLS step at ``beta``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.z.shape[1],):
        raise DomainError(f"beta has length {beta.size}, design has {design.z.shape[1]} columns")
    eta = design.z @ beta
    mu, mu_prime, v = family_eval(family, eta)
    w = design.effective_weight
    if not family.is_logistic:
        return WorkingRecords(eta, mu, mu_prime, v, design.y.copy(), w.copy(), np.zeros(len(eta), bool))
    degenerate = (mu <= MU_CLAMP) | (mu >= 1.0 - MU_CLAMP)
    y_tilde = (design.y - mu) / mu_prime + eta
    w_tilde = w * mu_prime
    return WorkingRecords(eta, mu, mu_prime, v, y_tilde, w_tilde, degenerate)


def robust_weight(family: FamilySpec, y, mu, weight, phi: float, freq=1.0):
    """Sandwich weight ``w^2 (Y - mu)^2 / phi^2`` (times the replication count)."""
    if not phi > 0:
        raise InvalidDispersionError(f"dispersion must be positive, got {phi}")
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    weight = np.asarray(weight, dtype=float)
    out = np.asarray(freq, dtype=float) * weight**2 * (y - mu) ** 2 / phi**2
    return float(out) if out.ndim == 0 else out


def local_sscp(
    z: np.ndarray,
    w: np.ndarray,
    labels: Sequence[str],
    y: np.ndarray | None = None,
    n_obs: float | None = None,
    compensated: bool = False,
    chunk: int = 4096,
) -> SscpMatrix:
    """``SSCP(Z || y, W)`` accumulated in record order.

    With ``compensated`` the running sums use Kahan summation; it is off
    by default so the result matches plain left-to-right accumulation.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    a = z if y is None else np.column_stack([z, np.asarray(y, dtype=float)])
    labels = tuple(labels) + (() if y is None else (WORKING_OUTCOME,))
    n, d = a.shape
    if len(w) != n:
        raise DomainError("weight vector length does not match the number of records")
    if d != len(labels):
        raise DomainError("label count does not match design width")
    total = np.zeros((d, d))
    comp = np.zeros((d, d))
    for start in range(0, n, chunk):
        block = a[start:start + chunk]
        # product of the two columns first keeps every term bitwise symmetric
        terms = (block[:, :, None] * block[:, None, :]) * w[start:start + chunk, None, None]
        if compensated:
            for t in terms:
                yk = t - comp
                tk = total + yk
                comp = (tk - total) - yk
                total = tk
        else:
            total = np.concatenate([total[None], terms]).sum(axis=0)
    if n_obs is None:
        n_obs = n
    return SscpMatrix(labels, total, n_obs, float(np.sum(w)))


def logistic_loglik(y: np.ndarray, eta: np.ndarray, w: np.ndarray) -> float:
    """``sum w [y eta - log(1 + exp(eta))]``."""
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def is_integral(x: float) -> bool:
    return math.isfinite(x) and x == int(x)
