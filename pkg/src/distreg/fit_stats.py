"""Goodness-of-fit measures assembled from additive per-site sums.

Every statistic here is a function of totals (SSE, corrected SST, log
likelihood, counts) that partners can compute locally and the analysis
center can add up, so the distributed value equals the pooled value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import DegenerateOutcomeError, InsufficientDataError, NumericalFailure

LR_TOLERANCE = 1e-8


@dataclass
class SiteStatContribution:
    """Additive scalars one partner publishes alongside its SSCP."""

    n_obs: float = 0.0          # sum of freq
    sum_weights: float = 0.0    # sum of freq * weight
    sum_y: float = 0.0          # sum of w Y
    sum_y_sq: float = 0.0       # sum of w Y^2
    sum_mu: float = 0.0         # sum of w mu
    sse: float = 0.0            # sum of w (Y - mu)^2
    sst: float = 0.0            # sum of w (Y - ybar)^2, final exchange only
    loglik: float = 0.0         # logistic log likelihood
    n_rows: float = 0.0         # physical records (freq ignored)

    def __add__(self, other: "SiteStatContribution") -> "SiteStatContribution":
        return SiteStatContribution(**{
            f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)
        })

    def to_rows(self) -> list[tuple[str, float]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @classmethod
    def from_rows(cls, rows: Mapping[str, float]) -> "SiteStatContribution":
        names = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in rows.items() if k in names})


def total_contributions(parts) -> SiteStatContribution:
    out = SiteStatContribution()
    for part in parts:
        out = out + part
    return out


@dataclass
class FitReport:
    """Named measures with an ordered view for output tables."""

    measures: dict[str, float] = field(default_factory=dict)
    flags: set[str] = field(default_factory=set)

    def __getitem__(self, key: str) -> float:
        return self.measures[key]

    def rows(self) -> list[tuple[str, float]]:
        return list(self.measures.items())


def linear_fit_stats(
    sse: float,
    sst_corrected: float,
    n: float,
    p: int,
    sigma2_hat: float,
    intercept_present: bool = True,
    ybar: float | None = None,
) -> FitReport:
    """R-square family and information criteria for a linear model.

    ``sst_corrected`` is the mean-corrected total sum of squares when the
    model has an intercept and the uncorrected one otherwise.
    """
    if n <= p:
        raise InsufficientDataError(f"need n > p for fit statistics (n={n}, p={p})")
    if sst_corrected <= 0:
        raise DegenerateOutcomeError("outcome has zero total sum of squares")
    rep = FitReport()
    m = rep.measures
    r2 = 1.0 - sse / sst_corrected
    m["Root MSE"] = math.sqrt(sigma2_hat)
    if ybar is not None:
        m["Dependent Mean"] = ybar
        m["Coeff Var"] = 100.0 * math.sqrt(sigma2_hat) / ybar if ybar != 0 else math.nan
    m["R-Square"] = r2
    df_total = n - 1 if intercept_present else n
    m["Adj R-Sq"] = 1.0 - (1.0 - r2) * df_total / (n - p)
    if sse > 0:
        base = n * math.log(sse / n)
        q = n * sigma2_hat / sse
        m["AIC"] = base + 2 * p
        m["BIC"] = base + 2 * (p + 2) * q - 2 * q * q
        m["SBC"] = base + p * math.log(n)
    else:
        rep.flags.add("perfect_fit")
        m["AIC"] = m["BIC"] = m["SBC"] = -math.inf
    m["SSE"] = sse
    m["Corrected Total SS" if intercept_present else "Uncorrected Total SS"] = sst_corrected
    return rep


def null_loglik(ybar: float, total_weight: float, intercept_present: bool = True) -> float:
    """Log likelihood of the intercept-only model (beta = 0 without intercept)."""
    if not intercept_present:
        return total_weight * math.log(0.5)
    if not 0 < ybar < 1:
        raise DegenerateOutcomeError("outcome mean must lie strictly between 0 and 1")
    return total_weight * (ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar))


def logistic_fit_stats(
    loglik: float,
    n: float,
    p: int,
    ybar: float,
    total_weight: float | None = None,
    intercept_present: bool = True,
) -> FitReport:
    if not 0 < ybar < 1:
        raise DegenerateOutcomeError("outcome mean must lie strictly between 0 and 1")
    total_weight = n if total_weight is None else total_weight
    ll0 = null_loglik(ybar, total_weight, intercept_present)
    rep = FitReport()
    m = rep.measures
    m["Log Likelihood"] = loglik
    m["-2 Log L"] = -2.0 * loglik
    m["Intercept-only Log Likelihood"] = ll0
    m["Deviance"] = -2.0 * loglik
    m["AIC"] = -2.0 * loglik + 2 * p
    m["AICC"] = -2.0 * loglik + 2 * p * n / (n - p - 1) if n - p - 1 > 0 else math.inf
    m["BIC"] = -2.0 * loglik + p * math.log(n)
    g_rsq = 1.0 - math.exp(2.0 * (ll0 - loglik) / n)
    m["R-Square"] = g_rsq
    m["Max-rescaled R-Square"] = g_rsq / (1.0 - math.exp(2.0 * ll0 / n))
    return rep


def global_null_test(loglik: float, loglik0: float, p_nonintercept: int):
    """Likelihood-ratio test of all slopes being zero."""
    stat = 2.0 * (loglik - loglik0)
    if stat < -2.0 * LR_TOLERANCE:
        raise NumericalFailure(f"likelihood ratio statistic is negative ({stat})")
    stat = max(stat, 0.0)
    p_value = float(stats.chi2.sf(stat, p_nonintercept)) if p_nonintercept > 0 else math.nan
    return stat, p_nonintercept, p_value


def anova_table(sse: float, sse1: float, n: float, p: int, intercept_present: bool = True):
    """Model/error decomposition with its F test.

    Returns ``(rows, F, p_value)`` where rows are
    ``(source, df, SS, mean square)`` for Model, Error and the total.
    """
    if n <= p:
        raise InsufficientDataError(f"need n > p for ANOVA (n={n}, p={p})")
    if sse1 <= 0:
        raise DegenerateOutcomeError("outcome has zero total sum of squares")
    df_model = p - 1 if intercept_present else p
    df_err = n - p
    ssr = sse1 - sse
    ms_err = sse / df_err
    if df_model <= 0:
        f_value, p_value = math.nan, math.nan
    else:
        ms_model = ssr / df_model
        if ms_err > 0:
            f_value = ms_model / ms_err
            p_value = float(stats.f.sf(f_value, df_model, df_err))
        else:
            f_value, p_value = math.inf, 0.0
    rows = [
        ("Model", df_model, ssr, ssr / df_model if df_model > 0 else math.nan),
        ("Error", df_err, sse, ms_err),
        ("Corrected Total" if intercept_present else "Uncorrected Total", df_model + df_err, sse1, math.nan),
    ]
    return rows, f_value, p_value


@dataclass
class InferenceRow:
    name: str
    estimate: float
    se: float
    stat: float
    p_value: float
    lower: float
    upper: float
    robust_se: float
    robust_stat: float
    robust_p_value: float
    robust_lower: float
    robust_upper: float


def _wald(est: float, se: float, dist, crit: float):
    if se > 0:
        stat = est / se
        return stat, float(2.0 * dist.sf(abs(stat))), est - crit * se, est + crit * se
    # exact fit: p-value is not defined
    return math.nan, math.nan, est, est


def inference_table(beta, names, model_cov, robust_cov, alpha: float, is_logistic: bool, n: float, p: int):
    """Estimates with Wald tests; Student t on N - p df for linear, normal for logistic."""
    beta = np.asarray(beta, dtype=float)
    dist = stats.norm if is_logistic else stats.t(n - p)
    crit = float(dist.ppf(1.0 - alpha / 2.0))
    se = np.sqrt(np.diag(model_cov))
    rse = np.sqrt(np.diag(robust_cov))
    out = []
    for i, name in enumerate(names):
        stat, pv, lo, hi = _wald(beta[i], se[i], dist, crit)
        rstat, rpv, rlo, rhi = _wald(beta[i], rse[i], dist, crit)
        out.append(InferenceRow(name, float(beta[i]), float(se[i]), stat, pv, lo, hi,
                                float(rse[i]), rstat, rpv, rlo, rhi))
    return out
