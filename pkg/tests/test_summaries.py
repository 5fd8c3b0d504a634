from __future__ import annotations

import numpy as np
import pytest

from distreg.errors import DataError
from distreg.oracle import exact_auc, exact_hosmer_lemeshow, exact_roc
from distreg.summaries import (
    PROB_OFFSET,
    BinningPolicy,
    BinSummary,
    assign_bins,
    bins_from_csv,
    bins_to_csv,
    enforce_floor,
    groups_for_site,
    hl_expand,
    hl_from_bins,
    hl_test,
    residual_summary,
    roc_curve,
    target_group_size,
)


def _bin(prob, nobs, dist=1, resp=None, pid=1, b=1):
    resp = nobs * prob if resp is None else resp
    return BinSummary(pid, b, prob, nobs, dist, resp / nobs, resp, nobs - resp, 0.0, 0.0, 0.0)


class TestAssignBins:
    def test_even_split(self):
        g = assign_bins(np.arange(10.0), np.ones(10), 2)
        assert g.tolist() == [0] * 5 + [1] * 5

    def test_target_size(self):
        assert target_group_size(100, 10, 6) == 10
        assert target_group_size(100, 30, 6) == 6

    def test_ties_never_split(self):
        assert assign_bins([0.4], [6], 3).tolist() == [0]

    def test_step_through_with_tie_block(self):
        # N=12, n_grp=3 -> target 4.  Walk: 1 (cum 1), +1 (2), +1 (3), next f=3: 3<4 but
        # 3+1.5>4 -> new group (cum 3), next f=1: 3<4 and 3.5<=4 -> join (4), next f=3:
        # 4 is not < 4 -> new group (cum 3).  Last group 3 > 2 so it stays.
        g = assign_bins([1, 2, 3, 4, 5, 6], [1, 1, 1, 3, 1, 5], 3)
        assert g.tolist() == [0, 0, 0, 1, 1, 2]

    def test_short_last_group_merged(self):
        # target 3; groups {0,1,2},{3,4,5},{6} and the single trailing value (1 <= 1.5) folds back
        g = assign_bins(np.arange(7.0), np.ones(7), 3, 3)
        assert g.tolist() == [0, 0, 0, 1, 1, 1, 1]

    @pytest.mark.parametrize("values, counts", [([], []), ([1.0, 1.0], [1, 1]), ([1.0], [0])])
    def test_invalid_input(self, values, counts):
        with pytest.raises(DataError):
            assign_bins(values, counts, 2)

    def test_floor_merges_small_group(self):
        g = enforce_floor(np.array([0, 1, 1, 2, 2, 2]), np.ones(6), 2)
        assert g.tolist() == [0, 0, 0, 1, 1, 1]

    def test_groups_for_site(self):
        assert groups_for_site(152, 6, 10000) == 25
        assert groups_for_site(152, 6, 10) == 10
        assert groups_for_site(3, 6, 10000) == 1


class TestResidualSummary:
    def test_identical_predictions_single_bin(self):
        mu = np.full(9, 0.3)
        y = np.array([1, 0, 0, 1, 0, 0, 0, 0, 1.0])
        bins = residual_summary(mu, y, y - mu, mu * 0.7, BinningPolicy(10, 1), 4)
        assert len(bins) == 1
        assert bins[0].prob_mean == pytest.approx(0.3) and bins[0].n_obs == 9
        assert bins[0].distinct_prob_count == 1 and bins[0].resp_count == 3

    def test_appendix_style_bins(self):
        # three groups of six records with 0, 1 and 2 events
        mu = np.repeat([0.1, 0.2, 0.3], 6) + np.tile(np.arange(6), 3) * 1e-3
        y = np.zeros(18)
        y[6] = 1
        y[12:14] = 1
        bins = residual_summary(mu, y, y - mu, mu * (1 - mu), BinningPolicy(3, 6), 1)
        assert [b.n_obs for b in bins] == [6, 6, 6]
        assert [b.resp_mean for b in bins] == pytest.approx([0.0, 1 / 6, 1 / 3])
        assert [b.distinct_prob_count for b in bins] == [6, 6, 6]

    def test_site_below_floor_gets_one_bin(self):
        mu = np.array([0.1, 0.5, 0.9])
        bins = residual_summary(mu, np.array([0, 1, 1.0]), np.zeros(3), np.zeros(3), BinningPolicy(10, 6), 2)
        assert len(bins) == 1 and bins[0].n_obs == 3

    def test_linear_residual_means_cancel(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=200)
        y = 1 + 2 * x + rng.normal(size=200)
        z = np.column_stack([np.ones(200), x])
        beta = np.linalg.lstsq(z, y, rcond=None)[0]
        mu = z @ beta
        bins = residual_summary(mu, y, y - mu, np.ones(200), BinningPolicy(10, 6), 1, binary_outcome=False)
        total = sum(b.n_obs * b.resid_mean for b in bins)
        assert abs(total) < 1e-10
        assert all(b.resp_count is None for b in bins)

    def test_freq_weighted_counts(self):
        mu = np.array([0.2, 0.4, 0.6])
        y = np.array([0.0, 1.0, 1.0])
        bins = residual_summary(mu, y, y - mu, mu, BinningPolicy(1, 1), 1, freq=np.array([2, 0, 3.0]))
        assert bins[0].n_obs == 5 and bins[0].resp_count == 3.0
        assert bins[0].prob_mean == pytest.approx((0.4 + 1.8) / 5)

    def test_csv_round_trip(self):
        b = [_bin(0.25, 8, 3, 2, pid=2, b=1), BinSummary(2, 2, 0.5, 7, 7, 0.4, None, None, 0.1, 0.2, 0.3)]
        back = bins_from_csv(bins_to_csv(b))
        assert back == b


class TestRoc:
    def test_perfect_separation(self):
        assert roc_curve([_bin(0.9, 5, resp=5), _bin(0.1, 5, resp=0)]).auc == 1.0

    def test_chance(self):
        assert roc_curve([_bin(0.5, 10, resp=5)]).auc == 0.5

    def test_undefined(self):
        with pytest.raises(DataError):
            roc_curve([_bin(0.5, 4, resp=0)])

    def test_unit_bins_equal_exact_individual_curve(self):
        rng = np.random.default_rng(9)
        mu = np.round(rng.uniform(size=300), 2)  # plenty of ties
        y = (rng.uniform(size=300) < mu).astype(float)
        bins = residual_summary(mu, y, y - mu, mu * (1 - mu), BinningPolicy(300, 1), 1)
        got = roc_curve(bins)
        ref = exact_roc(mu, y)
        assert np.allclose(got.prob, ref.prob, atol=1e-14, rtol=0)
        assert np.allclose(got.sensit, ref.sensit, atol=1e-12, rtol=0)
        assert np.allclose(got.one_minus_spec, ref.one_minus_spec, atol=1e-12, rtol=0)
        assert got.auc == pytest.approx(exact_auc(mu, y), abs=1e-12)

    def test_monotone(self):
        rng = np.random.default_rng(1)
        mu = rng.uniform(size=100)
        y = (rng.uniform(size=100) < mu).astype(float)
        r = roc_curve(residual_summary(mu, y, y - mu, mu, BinningPolicy(10, 1), 1))
        assert np.all(np.diff(r.sensit) >= 0) and np.all(np.diff(r.one_minus_spec) >= 0)
        assert 0 <= r.auc <= 1


class TestHosmerLemeshow:
    def test_expand_no_spread(self):
        assert hl_expand(_bin(0.3, 6)) == [(0.3, 6, pytest.approx(0.3), 1)]

    def test_expand_rules(self):
        out = hl_expand(_bin(0.3, 6, dist=4))
        assert [r[1] for r in out] == [3, 1, 1, 1]
        assert [r[0] for r in out] == [0.3, 0.3 + PROB_OFFSET, 0.3 + 2 * PROB_OFFSET, 0.3 + 3 * PROB_OFFSET]

    def test_expand_single(self):
        assert [r[:2] for r in hl_expand(_bin(0.7, 1))] == [(0.7, 1)]

    def test_expand_rejects_more_values_than_records(self):
        with pytest.raises(DataError):
            hl_expand(_bin(0.3, 2, dist=3))

    def test_calibrated_groups(self):
        recs = [(p, 10, p, 1) for p in (0.1, 0.2, 0.3, 0.4, 0.5)]
        res = hl_test(recs, g=5)
        assert res.chi_sq == pytest.approx(0.0, abs=1e-24) and res.p_value == pytest.approx(1.0)
        assert res.df == 3

    def test_needs_three_groups(self):
        with pytest.raises(DataError):
            hl_test([(0.2, 5, 0.2)], g=2)

    def test_unit_bins_equal_individual_test(self):
        rng = np.random.default_rng(12)
        mu = rng.uniform(0.05, 0.95, size=400)
        y = (rng.uniform(size=400) < mu).astype(float)
        bins = residual_summary(mu, y, y - mu, mu * (1 - mu), BinningPolicy(400, 1), 1)
        got = hl_from_bins(bins, 10)
        ref = exact_hosmer_lemeshow(mu, y, 10)
        assert got.chi_sq == pytest.approx(ref.chi_sq, rel=1e-12)
        assert got.p_value == pytest.approx(ref.p_value, rel=1e-10)
        assert got.df == ref.df == 8
