"""Analysis-center numerics.

Combines partner SSCP matrices, solves the weighted normal equations with
a pivoted Cholesky factorisation, and builds model-based and sandwich
covariances.  The matrices involved are (p+1) x (p+1) with p the number
of covariates, so everything here is dense and small.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CollinearityError,
    DomainError,
    InsufficientDataError,
    NumericalFailure,
    ProtocolError,
)
from .tables import decode_csv, encode_csv, parse_float

PIVOT_TOL = 1e-12
CONDITION_WARN = 1e10
SMALL_COEF = 0.01


@dataclass
class SscpMatrix:
    """Labelled weighted cross-product matrix ``A^T W A`` with its row counts."""

    labels: tuple[str, ...]
    values: np.ndarray
    n_obs: float = 0.0
    sum_weights: float = 0.0

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.values = np.asarray(self.values, dtype=float)
        d = len(self.labels)
        if self.values.shape != (d, d):
            raise ProtocolError(f"SSCP shape {self.values.shape} does not match {d} labels")
        if len(set(self.labels)) != d:
            raise ProtocolError("SSCP labels must be unique")

    @property
    def xpx(self) -> np.ndarray:
        """Cross-product block of the design columns (all but the outcome)."""
        return self.values[:-1, :-1]

    @property
    def xpy(self) -> np.ndarray:
        return self.values[:-1, -1]

    @property
    def ypy(self) -> float:
        return float(self.values[-1, -1])

    def to_csv(self) -> bytes:
        rows = []
        for name, row in zip(self.labels, self.values):
            rows.append(["SSCP", name, *row])
        d = len(self.labels)
        rows.append(["N", "", *([self.n_obs] * d)])
        rows.append(["SUMWGT", "", *([self.sum_weights] * d)])
        return encode_csv(["_TYPE_", "_NAME_", *self.labels], rows)

    @classmethod
    def from_csv(cls, data: bytes) -> "SscpMatrix":
        header, rows = decode_csv(data)
        if header[:2] != ["_TYPE_", "_NAME_"]:
            raise ProtocolError("SSCP file must start with _TYPE_,_NAME_ columns")
        labels = tuple(header[2:])
        mat, n_obs, sumw = [], None, None
        for row in rows:
            kind = row[0]
            nums = [parse_float(v) for v in row[2:]]
            if kind == "SSCP":
                mat.append(nums)
            elif kind == "N":
                n_obs = nums[0]
            elif kind == "SUMWGT":
                sumw = nums[0]
            else:
                raise ProtocolError(f"unexpected SSCP row type {kind!r}")
        if n_obs is None or sumw is None:
            raise ProtocolError("SSCP file lacks its N/SUMWGT sidecar rows")
        if n_obs == int(n_obs):
            n_obs = int(n_obs)
        return cls(labels, np.array(mat, dtype=float).reshape(len(labels), len(labels)), n_obs, sumw)


@dataclass
class IterationState:
    beta: np.ndarray
    iteration: int = 0
    deltas: np.ndarray | None = None
    converged: bool = False
    history: list[tuple[int, np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history.append((0, np.array(self.beta, dtype=float), float("nan")))

    def advance(self, beta: np.ndarray, deltas: np.ndarray, converged: bool) -> None:
        self.iteration += 1
        self.beta = np.array(beta, dtype=float)
        self.deltas = np.asarray(deltas, dtype=float)
        self.converged = converged
        max_delta = float(np.max(np.abs(deltas))) if len(deltas) else 0.0
        self.history.append((self.iteration, self.beta.copy(), max_delta))


@dataclass
class CovarianceBundle:
    model_cov: np.ndarray
    robust_cov: np.ndarray
    xpx_inverse: np.ndarray
    dispersion: float
    sigma2_hat: float | None = None


def combine_sscp(parts: Sequence[SscpMatrix], partner_ids: Sequence[int] | None = None) -> SscpMatrix:
    """Elementwise sum of partner matrices.

    Parts are summed in the order given; callers pass them sorted by
    partner id so that the floating-point result is reproducible.
    """
    if not parts:
        raise ProtocolError("no SSCP parts to combine")
    ids = list(partner_ids) if partner_ids is not None else list(range(1, len(parts) + 1))
    labels = parts[0].labels
    for pid, part in zip(ids, parts):
        if part.labels != labels:
            raise ProtocolError(
                f"SSCP labels from partner {pid} {list(part.labels)} differ from {list(labels)}"
            )
    values = parts[0].values.copy()
    n_obs = parts[0].n_obs
    sumw = parts[0].sum_weights
    for part in parts[1:]:
        values = values + part.values
        n_obs = n_obs + part.n_obs
        sumw = sumw + part.sum_weights
    return SscpMatrix(labels, values, n_obs, sumw)


def _pivoted_cholesky(a: np.ndarray, labels: Sequence[str], tol: float = PIVOT_TOL):
    """Diagonal-pivoted Cholesky of the unit-diagonal scaling of ``a``.

    Returns ``(L, perm, scale)`` with ``S A S = P L L^T P^T`` on the
    permuted index set, ``S = diag(scale)``.
    """
    n = a.shape[0]
    diag = np.diag(a).copy()
    for j in range(n):
        if not diag[j] > 0:
            raise CollinearityError(
                f"column {labels[j]!r} has a non-positive weighted sum of squares", labels[j]
            )
    scale = 1.0 / np.sqrt(diag)
    work = a * scale[:, None] * scale[None, :]
    perm = list(range(n))
    L = np.zeros((n, n))
    for k in range(n):
        rest = np.array([work[i, i] for i in range(k, n)])
        j = k + int(np.argmax(rest))
        if rest.max() < tol:
            dep = sorted(perm[k:])
            raise CollinearityError(
                "design is collinear: column(s) "
                + ", ".join(repr(labels[i]) for i in dep)
                + " are linear combinations of the others",
                labels[dep[0]],
            )
        if j != k:
            work[[k, j], :] = work[[j, k], :]
            work[:, [k, j]] = work[:, [j, k]]
            L[[k, j], :k] = L[[j, k], :k]
            perm[k], perm[j] = perm[j], perm[k]
        piv = np.sqrt(work[k, k])
        L[k, k] = piv
        L[k + 1:, k] = work[k + 1:, k] / piv
        work[k + 1:, k + 1:] -= np.outer(L[k + 1:, k], L[k + 1:, k])
    return L, np.array(perm), scale


def _forward(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.zeros_like(b, dtype=float)
    for i in range(len(b)):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def _backward(U: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = len(b)
    x = np.zeros_like(b, dtype=float)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - U[i, i + 1:] @ x[i + 1:]) / U[i, i]
    return x


def spd_solve_and_inverse(a: np.ndarray, b: np.ndarray, labels: Sequence[str]):
    """Solve ``a x = b`` and invert ``a`` for symmetric positive definite ``a``."""
    L, perm, scale = _pivoted_cholesky(a, labels)
    n = a.shape[0]

    def solve(rhs: np.ndarray) -> np.ndarray:
        r = (rhs * scale)[perm]
        y = _backward(L.T, _forward(L, r))
        out = np.empty(n)
        out[perm] = y
        return out * scale

    x = solve(np.asarray(b, dtype=float))
    inv = np.column_stack([solve(e) for e in np.eye(n)])
    inv = 0.5 * (inv + inv.T)
    return x, inv


def solve_wls(sscp: SscpMatrix) -> tuple[np.ndarray, np.ndarray, float]:
    """Weighted least squares from a ``SSCP(Z || y, W)`` matrix.

    Returns the coefficients, ``(Z^T W Z)^{-1}`` and the working residual
    sum of squares ``y^T W y - beta^T Z^T W y``.
    """
    xpx, xpy = sscp.xpx, sscp.xpy
    beta, inv = spd_solve_and_inverse(xpx, xpy, sscp.labels[:-1])
    sse = sscp.ypy - float(beta @ xpy)
    return beta, inv, sse


def estimate_dispersion(is_logistic: bool, sse: float, n_obs: float, p: int) -> float:
    """``SSE / (N - p)`` for the linear model, 1 for logistic."""
    if n_obs <= p:
        raise InsufficientDataError(f"need more observations than parameters (N={n_obs}, p={p})")
    if is_logistic:
        return 1.0
    return float(sse) / (n_obs - p)


def model_covariance(xpx_inverse: np.ndarray, phi: float) -> np.ndarray:
    xpx_inverse = np.asarray(xpx_inverse, dtype=float)
    if xpx_inverse.ndim != 2 or xpx_inverse.shape[0] != xpx_inverse.shape[1]:
        raise ProtocolError("inverse cross-product matrix must be square")
    cov = phi * xpx_inverse
    if np.any(np.diag(cov) < 0):
        raise NumericalFailure("negative variance on the covariance diagonal")
    return cov


def hc1_factor(n_obs: float, p: int) -> float:
    return n_obs / (n_obs - p)


def robust_covariance(info_inverse: np.ndarray, meat: np.ndarray) -> np.ndarray:
    """Sandwich ``I^{-1} I_1 I^{-1}``.

    ``info_inverse`` is ``phi (Z^T W~ Z)^{-1}``; ``meat`` is the summed
    ``SSCP(Z, W^H)`` already multiplied by ``N / (N - p)``.
    """
    info_inverse = np.asarray(info_inverse, dtype=float)
    meat = np.asarray(meat, dtype=float)
    if info_inverse.shape != meat.shape:
        raise ProtocolError(
            f"robust SSCP shape {meat.shape} does not match covariance shape {info_inverse.shape}"
        )
    cov = info_inverse @ meat @ info_inverse
    cov = 0.5 * (cov + cov.T)
    if np.any(np.diag(cov) < 0):
        raise NumericalFailure("negative variance on the robust covariance diagonal")
    return cov


def check_convergence(prev: np.ndarray, new: np.ndarray, xconv: float) -> tuple[bool, np.ndarray]:
    """Relative change per coefficient, absolute when ``|prev| < 0.01``."""
    prev = np.asarray(prev, dtype=float)
    new = np.asarray(new, dtype=float)
    if prev.shape != new.shape:
        raise DomainError("coefficient vectors differ in length")
    diff = new - prev
    small = np.abs(prev) < SMALL_COEF
    safe = np.where(small, 1.0, prev)
    deltas = np.where(small, diff, diff / safe)
    converged = bool(np.max(np.abs(deltas)) < xconv) if len(deltas) else True
    return converged, deltas


def condition_diagnostic(sscp: SscpMatrix, has_outcome: bool = True) -> float:
    """Condition number of the unit-diagonal scaled cross-product block.

    Returns ``inf`` when the block is singular.
    """
    block = sscp.xpx if has_outcome else sscp.values
    d = np.diag(block)
    if np.any(d <= 0):
        bad = sscp.labels[int(np.argmax(d <= 0))]
        raise CollinearityError(f"column {bad!r} has a non-positive diagonal", bad)
    s = 1.0 / np.sqrt(d)
    scaled = block * s[:, None] * s[None, :]
    eig = np.linalg.eigvalsh(scaled)
    lo, hi = eig[0], eig[-1]
    if lo <= hi * np.finfo(float).eps * len(eig):
        return float("inf")
    return float(hi / lo)
