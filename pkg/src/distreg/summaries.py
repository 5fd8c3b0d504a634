"""Privacy-binned residual summaries, approximate ROC/AUC and Hosmer-Lemeshow.

Partners sort their scored records by predicted mean, cut them into
percentile bins that never split ties and never fall below the site's
minimum cell count, and publish only per-bin aggregates.  The analysis
center runs the usual ROC and Hosmer-Lemeshow algorithms on the pooled
bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DataError
from .tables import decode_csv, encode_csv, parse_float

PROB_OFFSET = 1e-10

BIN_COLUMNS = (
    "dp_cd", "bin", "PROB", "Nobs", "Dist_PROB_Cnt_per_bin", "RESP_Mean", "RESP", "NO_RESP",
    "RESID_Mean", "RESID_SQ_Mean", "VAR_Mean",
)


@dataclass
class BinSummary:
    partner_id: int
    bin: int
    prob_mean: float
    n_obs: float
    distinct_prob_count: int
    resp_mean: float
    resp_count: float | None
    noresp_count: float | None
    resid_mean: float
    resid_sq_mean: float
    variance_mean: float

    def row(self) -> list:
        return [self.partner_id, self.bin, self.prob_mean, self.n_obs, self.distinct_prob_count,
                self.resp_mean, self.resp_count, self.noresp_count, self.resid_mean,
                self.resid_sq_mean, self.variance_mean]


@dataclass(frozen=True)
class BinningPolicy:
    n_grp: int
    n_min: int = 1
    max_groups: int = 10000

    def __post_init__(self):
        if self.n_min < 1:
            raise ValueError("minimum count per group must be >= 1")
        if self.n_grp < 1 or self.max_groups < 1:
            raise ValueError("group counts must be >= 1")


def bins_to_csv(bins: Iterable[BinSummary]) -> bytes:
    return encode_csv(BIN_COLUMNS, (b.row() for b in bins))


def bins_from_csv(data: bytes) -> list[BinSummary]:
    header, rows = decode_csv(data)
    if tuple(header) != BIN_COLUMNS:
        raise DataError(f"unexpected bin summary columns {header}")
    out = []
    for r in rows:
        def num(i):
            return None if r[i] == "" else parse_float(r[i])
        n_obs = parse_float(r[3])
        out.append(BinSummary(
            partner_id=int(r[0]), bin=int(r[1]), prob_mean=parse_float(r[2]),
            n_obs=int(n_obs) if n_obs == int(n_obs) else n_obs,
            distinct_prob_count=int(r[4]), resp_mean=parse_float(r[5]),
            resp_count=num(6), noresp_count=num(7), resid_mean=parse_float(r[8]),
            resid_sq_mean=parse_float(r[9]), variance_mean=parse_float(r[10]),
        ))
    return out


def target_group_size(n_total: float, n_grp: int, n_min: int) -> int:
    return max(int(n_total / n_grp + 0.5), n_min)


def assign_bins(values: Sequence[float], counts: Sequence[float], n_grp: int, n_min: int = 1) -> np.ndarray:
    """Group sorted distinct values into roughly equal-count groups.

    ``values`` must be strictly increasing with ``counts`` the number of
    records at each value.  Returns the 0-based group index of each
    value.  Ties are never split, and a trailing group holding no more
    than half the target size is folded into its predecessor.
    """
    values = np.asarray(values, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if len(values) == 0:
        raise DataError("cannot bin an empty set of values")
    if len(values) != len(counts):
        raise DataError("values and counts differ in length")
    if np.any(np.diff(values) <= 0):
        raise DataError("binning input must be strictly increasing")
    if np.any(counts < 1):
        raise DataError("every distinct value needs a count >= 1")
    target = target_group_size(counts.sum(), n_grp, n_min)
    groups = np.zeros(len(values), dtype=int)
    g = 0
    cum = counts[0]
    for j in range(1, len(values)):
        f = counts[j]
        if cum < target and cum + f / 2 <= target:
            cum += f
        else:
            g += 1
            cum = f
        groups[j] = g
    if g > 0 and cum <= target / 2:
        groups[groups == g] = g - 1
    return groups


def enforce_floor(groups: np.ndarray, counts: Sequence[float], n_min: int) -> np.ndarray:
    """Merge any group smaller than ``n_min`` into a neighbour.

    The greedy rule can close a group early when the next tie block is
    large; this pass guarantees the published floor.
    """
    groups = np.asarray(groups).copy()
    counts = np.asarray(counts, dtype=float)
    while True:
        ids = np.unique(groups)
        if len(ids) < 2:
            return _renumber(groups)
        totals = np.array([counts[groups == i].sum() for i in ids])
        small = np.flatnonzero(totals < n_min)
        if len(small) == 0:
            return _renumber(groups)
        k = small[0]
        if k + 1 < len(ids):
            groups[groups == ids[k]] = ids[k + 1]
        else:
            groups[groups == ids[k]] = ids[k - 1]


def _renumber(groups: np.ndarray) -> np.ndarray:
    _, inv = np.unique(groups, return_inverse=True)
    return inv


def groups_for_site(n_k: float, n_min: int, max_groups: int) -> int:
    """Finest grouping a site allows: ``int(n_k / n_min)`` capped at ``max_groups``."""
    return max(1, min(int(n_k / n_min), max_groups))


def residual_summary(
    mu: np.ndarray,
    y: np.ndarray,
    resid: np.ndarray,
    variance: np.ndarray,
    policy: BinningPolicy,
    partner_id: int,
    freq: np.ndarray | None = None,
    binary_outcome: bool = True,
) -> list[BinSummary]:
    """Per-bin means of scored records grouped by percentiles of ``mu``."""
    mu = np.asarray(mu, dtype=float)
    freq = np.ones(len(mu)) if freq is None else np.asarray(freq, dtype=float)
    keep = freq > 0
    mu, y, resid, variance, freq = (np.asarray(a, dtype=float)[keep] for a in (mu, y, resid, variance, freq))
    if len(mu) == 0:
        raise DataError(f"partner {partner_id} has no records to summarise")
    order = np.argsort(mu, kind="stable")
    mu, y, resid, variance, freq = mu[order], y[order], resid[order], variance[order], freq[order]
    distinct, first, inverse = np.unique(mu, return_index=True, return_inverse=True)
    counts = np.bincount(inverse, weights=freq)
    n_k = freq.sum()
    if n_k < policy.n_min:
        value_group = np.zeros(len(distinct), dtype=int)
    else:
        n_grp = min(policy.n_grp, policy.max_groups)
        value_group = assign_bins(distinct, counts, n_grp, policy.n_min)
        value_group = enforce_floor(value_group, counts, policy.n_min)
    rec_group = value_group[inverse]
    out = []
    for g in range(value_group.max() + 1):
        sel = rec_group == g
        f = freq[sel]
        n = f.sum()
        resp = float(np.sum(f * y[sel])) if binary_outcome else None
        out.append(BinSummary(
            partner_id=partner_id,
            bin=g + 1,
            prob_mean=float(np.sum(f * mu[sel]) / n),
            n_obs=int(n) if n == int(n) else float(n),
            distinct_prob_count=int(np.count_nonzero(value_group == g)),
            resp_mean=float(np.sum(f * y[sel]) / n),
            resp_count=resp,
            noresp_count=(float(n) - resp) if binary_outcome else None,
            resid_mean=float(np.sum(f * resid[sel]) / n),
            resid_sq_mean=float(np.sum(f * resid[sel] ** 2) / n),
            variance_mean=float(np.sum(f * variance[sel]) / n),
        ))
    return out


def sort_bins(bins: Iterable[BinSummary]) -> list[BinSummary]:
    return sorted(bins, key=lambda b: (b.prob_mean, b.partner_id, b.bin))


@dataclass
class RocResult:
    prob: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    falpos: np.ndarray
    falneg: np.ndarray
    sensit: np.ndarray
    one_minus_spec: np.ndarray
    auc: float

    def rows(self):
        for i in range(len(self.prob)):
            yield [self.prob[i], self.pos[i], self.neg[i], self.falpos[i], self.falneg[i],
                   self.sensit[i], self.one_minus_spec[i], self.auc]


ROC_COLUMNS = ("PROB", "POS", "NEG", "FALPOS", "FALNEG", "SENSIT", "1MSPEC", "AUC")


def roc_curve(bins: Sequence[BinSummary]) -> RocResult:
    """ROC points at every distinct bin mean and the trapezoidal AUC."""
    if not bins:
        raise DataError("no bins for ROC")
    if any(b.resp_count is None for b in bins):
        raise DataError("ROC needs event/non-event counts in every bin")
    prob = np.array([b.prob_mean for b in bins])
    resp = np.array([b.resp_count for b in bins], dtype=float)
    noresp = np.array([b.noresp_count for b in bins], dtype=float)
    total_pos, total_neg = resp.sum(), noresp.sum()
    if total_pos == 0 or total_neg == 0:
        raise DataError("ROC undefined: need both events and non-events")
    z, inv = np.unique(prob, return_inverse=True)
    z = z[::-1]
    inv = len(z) - 1 - inv
    r_at = np.bincount(inv, weights=resp, minlength=len(z))
    n_at = np.bincount(inv, weights=noresp, minlength=len(z))
    pos = np.cumsum(r_at)
    falpos = np.cumsum(n_at)
    neg = total_neg - falpos
    falneg = total_pos - pos
    sens = pos / total_pos
    fpr = falpos / total_neg
    xs = np.concatenate([[0.0], fpr])
    ys = np.concatenate([[0.0], sens])
    auc = float(0.5 * np.sum((ys[1:] + ys[:-1]) * (xs[1:] - xs[:-1])))
    return RocResult(z, pos, neg, falpos, falneg, sens, fpr, auc)


def hl_expand(b: BinSummary) -> list[tuple[float, float, float, int]]:
    """Spread a bin's distinct-value count over nearly equal pseudo-records.

    Returns ``(PROB, Nobsnew, RESP_Mean, partner_id)`` tuples: one record
    at the bin mean carrying ``Nobs - Dist + 1`` observations followed by
    ``Dist - 1`` single-observation records offset by multiples of 1e-10.
    """
    dist = int(b.distinct_prob_count)
    if dist < 1:
        raise DataError("bin must report at least one distinct predicted value")
    if dist > b.n_obs:
        raise DataError(
            f"bin {b.bin} of partner {b.partner_id} reports {dist} distinct values but only {b.n_obs} records"
        )
    out = [(b.prob_mean, b.n_obs - dist + 1, b.resp_mean, b.partner_id)]
    for j in range(1, dist):
        out.append((b.prob_mean + j * PROB_OFFSET, 1, b.resp_mean, b.partner_id))
    return out


@dataclass
class HLResult:
    chi_sq: float
    df: int
    p_value: float
    partition: list[tuple[int, float, float, float, float, float]]

    @property
    def value_df(self) -> float:
        return self.chi_sq / self.df


HL_PARTITION_COLUMNS = ("Group", "Total", "Observed_Event", "Expected_Event",
                        "Observed_Nonevent", "Expected_Nonevent")


def hl_test(records: Sequence[tuple], g: int = 10) -> HLResult:
    """Hosmer-Lemeshow statistic over ``(PROB, count, RESP_Mean, ...)`` records."""
    if g < 3:
        raise DataError("Hosmer-Lemeshow needs at least 3 groups")
    recs = sorted(records, key=lambda r: (r[0], r[3] if len(r) > 3 else 0))
    prob = np.array([r[0] for r in recs], dtype=float)
    cnt = np.array([r[1] for r in recs], dtype=float)
    ym = np.array([r[2] for r in recs], dtype=float)
    keep = cnt > 0
    prob, cnt, ym = prob[keep], cnt[keep], ym[keep]
    distinct, inv = np.unique(prob, return_inverse=True)
    counts = np.bincount(inv, weights=cnt)
    value_group = assign_bins(distinct, counts, g, 1)
    rec_group = value_group[inv]
    n_groups = int(value_group.max()) + 1
    if n_groups < 3:
        raise DataError(f"only {n_groups} Hosmer-Lemeshow groups could be formed")
    chi = 0.0
    partition = []
    for l in range(n_groups):
        sel = rec_group == l
        n_l = cnt[sel].sum()
        mu_bar = float(np.sum(cnt[sel] * prob[sel]) / n_l)
        y_bar = float(np.sum(cnt[sel] * ym[sel]) / n_l)
        if mu_bar <= 0.0 or mu_bar >= 1.0:
            raise DataError(f"Hosmer-Lemeshow group {l + 1} has mean predicted value {mu_bar}")
        chi += n_l * (y_bar - mu_bar) ** 2 / (mu_bar * (1.0 - mu_bar))
        obs = n_l * y_bar
        exp_ = n_l * mu_bar
        partition.append((l + 1, n_l, obs, exp_, n_l - obs, n_l - exp_))
    df = n_groups - 2
    return HLResult(chi, df, float(stats.chi2.sf(chi, df)), partition)


def hl_from_bins(bins: Sequence[BinSummary], g: int = 10) -> HLResult:
    records = []
    for b in sort_bins(bins):
        records.extend(hl_expand(b))
    return hl_test(records, g)
