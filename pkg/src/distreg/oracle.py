"""Reference fit on the pooled individual-level data.

This is the yardstick for the distributed code path, so it deliberately
shares none of its arithmetic: cross products come from plain matrix
products, solves and inverses from LAPACK via ``numpy.linalg``, and the
ROC curve, AUC and Hosmer-Lemeshow groups are computed record by record.
Only input parsing and the closed-form fit-statistic formulas are shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .config import ModelSpec
from .coordinator import FitOutputs, HistoryRow
from .errors import CollinearityError, DataError, DegenerateOutcomeError, NonConvergenceError
from .fit_stats import (
    SiteStatContribution,
    anova_table,
    global_null_test,
    inference_table,
    linear_fit_stats,
    logistic_fit_stats,
)
from .model_core import MU_CLAMP, AnalyticDataset, build_design
from .solver import CovarianceBundle
from .summaries import HLResult, RocResult


def _mean_fn(is_logistic: bool, eta: np.ndarray):
    if not is_logistic:
        return eta, np.ones_like(eta)
    mu = np.clip(1.0 / (1.0 + np.exp(-eta)), MU_CLAMP, 1.0 - MU_CLAMP)
    return mu, mu * (1.0 - mu)


def _cross(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (x * w[:, None]).T @ x


def _solve(a: np.ndarray, b: np.ndarray, names) -> np.ndarray:
    if np.linalg.matrix_rank(a) < a.shape[0]:
        raise CollinearityError(f"pooled design is singular over {list(names)}")
    return np.linalg.solve(a, b)


def exact_roc(mu: np.ndarray, y: np.ndarray, freq: np.ndarray | None = None) -> RocResult:
    """ROC at every distinct predicted value, counting records directly."""
    f = np.ones(len(mu)) if freq is None else np.asarray(freq, dtype=float)
    pos_w = f * y
    neg_w = f * (1.0 - y)
    P, N = pos_w.sum(), neg_w.sum()
    if P == 0 or N == 0:
        raise DataError("ROC undefined: need both events and non-events")
    z = np.unique(mu)[::-1]
    pos = np.empty(len(z))
    fp = np.empty(len(z))
    for start in range(0, len(z), 512):
        above = mu[None, :] >= z[start:start + 512, None]
        pos[start:start + 512] = above @ pos_w
        fp[start:start + 512] = above @ neg_w
    sens, fpr = pos / P, fp / N
    return RocResult(z, pos, N - fp, fp, P - pos, sens, fpr, exact_auc(mu, y, f))


def exact_auc(mu: np.ndarray, y: np.ndarray, freq: np.ndarray | None = None) -> float:
    """Mann-Whitney probability that an event outranks a non-event (ties count half)."""
    f = np.ones(len(mu)) if freq is None else np.asarray(freq, dtype=float)
    ranks = stats.rankdata(mu)  # mid-ranks for ties
    if freq is None:
        n1 = float(np.sum(y))
        n0 = len(y) - n1
        return float((np.sum(ranks[y == 1]) - n1 * (n1 + 1) / 2) / (n1 * n0))
    # replicated records: expand conceptually via weighted tie counts
    vals, inv = np.unique(mu, return_inverse=True)
    p_at = np.bincount(inv, weights=f * y, minlength=len(vals))
    n_at = np.bincount(inv, weights=f * (1 - y), minlength=len(vals))
    below = np.concatenate([[0.0], np.cumsum(n_at)[:-1]])
    return float(np.sum(p_at * (below + 0.5 * n_at)) / (p_at.sum() * n_at.sum()))


def exact_hosmer_lemeshow(mu: np.ndarray, y: np.ndarray, g: int = 10,
                          freq: np.ndarray | None = None) -> HLResult:
    """Hosmer-Lemeshow on individual records.

    Walks the records in predicted-value order, closing a group once it
    has reached the target size unless adding the next tie block would
    overshoot by more than half of that block; a short last group is
    merged into the previous one.
    """
    f = np.ones(len(mu)) if freq is None else np.asarray(freq, dtype=float)
    order = np.argsort(mu, kind="stable")
    mu, y, f = mu[order], y[order], f[order]
    total = f.sum()
    target = max(int(total / g + 0.5), 1)
    members: list[list[int]] = [[]]
    size = 0.0
    i = 0
    while i < len(mu):
        j = i
        while j < len(mu) and mu[j] == mu[i]:
            j += 1
        block = f[i:j].sum()
        if members[-1] and not (size < target and size + block / 2 <= target):
            members.append([])
            size = 0.0
        members[-1].extend(range(i, j))
        size += block
        i = j
    if len(members) > 1 and size <= target / 2:
        tail = members.pop()
        members[-1].extend(tail)
    if len(members) < 3:
        raise DataError(f"only {len(members)} Hosmer-Lemeshow groups could be formed")
    chi = 0.0
    partition = []
    for gi, idx in enumerate(members, start=1):
        idx = np.array(idx)
        n = f[idx].sum()
        obs = float(np.sum(f[idx] * y[idx]))
        exp_ = float(np.sum(f[idx] * mu[idx]))
        chi += (obs - exp_) ** 2 / (exp_ * (1.0 - exp_ / n))
        partition.append((gi, n, obs, exp_, n - obs, n - exp_))
    df = len(members) - 2
    return HLResult(chi, df, float(stats.chi2.sf(chi, df)), partition)


@dataclass
class OracleScores:
    mu: np.ndarray
    y: np.ndarray
    freq: np.ndarray


def pooled_fit(data: AnalyticDataset, spec: ModelSpec, beta0=None,
               diagnostics: bool = True) -> tuple[FitOutputs, OracleScores]:
    """IRLS on the pooled records with the same start, criterion and cap."""
    d = build_design(data, spec)
    names = spec.coef_names
    x, y = d.z, d.y
    w = d.weight * d.freq
    n = float(d.freq.sum())
    p = x.shape[1]
    logistic = spec.is_logistic
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    history = []
    iteration = 0
    converged = False
    while True:
        eta = x @ beta
        mu, dmu = _mean_fn(logistic, eta)
        ll = float(np.sum(w * (y * np.log(mu) + (1 - y) * np.log(1 - mu)))) if logistic else None
        if iteration == 0:
            history.append(HistoryRow(0, beta.copy(), math.nan, ll))
        else:
            history[-1].loglik = ll
        if converged:
            break
        wt = w * dmu
        z = eta + (y - mu) / dmu if logistic else y
        new = _solve(_cross(x, wt), x.T @ (wt * z), names)
        delta = np.array([
            (b1 - b0) if abs(b0) < 0.01 else (b1 - b0) / b0 for b0, b1 in zip(beta, new)
        ])
        iteration += 1
        beta = new
        history.append(HistoryRow(iteration, beta.copy(), float(np.max(np.abs(delta))), None))
        converged = (not logistic) or bool(np.max(np.abs(delta)) < spec.xconv)
        if not converged and iteration >= spec.max_iter_nb:
            raise NonConvergenceError(f"pooled IRLS did not converge in {iteration} iterations")

    eta = x @ beta
    mu, dmu = _mean_fn(logistic, eta)
    resid = y - mu
    info = _cross(x, w * dmu)
    inv = np.linalg.inv(info)
    inv = 0.5 * (inv + inv.T)
    sse = float(np.sum(w * resid ** 2))
    sigma2 = sse / (n - p)
    phi = 1.0 if logistic else sigma2
    model_cov = phi * inv
    meat = _cross(x, d.freq * d.weight ** 2 * resid ** 2) * n / (n - p)
    robust = inv @ meat @ inv
    robust = 0.5 * (robust + robust.T)
    sw = float(w.sum())
    ybar = float(np.sum(w * y) / sw)
    totals = SiteStatContribution(
        n_obs=n, sum_weights=sw, sum_y=float(np.sum(w * y)), sum_y_sq=float(np.sum(w * y * y)),
        sum_mu=float(np.sum(w * mu)), sse=sse, sst=float(np.sum(w * (y - ybar) ** 2)),
        loglik=history[-1].loglik or 0.0, n_rows=float(len(y)),
    )
    anova = glob_null = None
    if logistic:
        fit = logistic_fit_stats(totals.loglik, n, p, ybar, sw, spec.intercept)
        glob_null = global_null_test(totals.loglik, fit["Intercept-only Log Likelihood"],
                                     p - 1 if spec.intercept else p)
    else:
        sst = totals.sst if spec.intercept else totals.sum_y_sq
        fit = linear_fit_stats(sse, sst, n, p, sigma2, spec.intercept, ybar)
        anova = anova_table(sse, sst, n, p, spec.intercept)
    s = 1.0 / np.sqrt(np.diag(info))
    condition = float(np.linalg.cond(info * s[:, None] * s[None, :]))
    roc = hl = None
    warnings = []
    if logistic and diagnostics:
        try:
            roc = exact_roc(mu, y, d.freq)
        except DataError as exc:
            warnings.append(str(exc))
        try:
            hl = exact_hosmer_lemeshow(mu, y, spec.groups, d.freq)
        except (DataError, DegenerateOutcomeError) as exc:
            warnings.append(str(exc))
    out = FitOutputs(
        spec=spec, names=names, beta=beta, converged=converged, iterations=iteration,
        exchanges=iteration + 1, history=history,
        cov=CovarianceBundle(model_cov, robust, inv, phi, None if logistic else sigma2),
        fit=fit,
        inference=inference_table(beta, names, model_cov, robust, spec.alpha, logistic, n, p),
        totals=totals, condition=condition, anova=anova, global_null=glob_null,
        roc=roc, hl=hl, warnings=warnings,
    )
    return out, OracleScores(mu, y, d.freq)
