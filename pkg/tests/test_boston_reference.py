"""Published Boston housing results, reproduced to their printed precision.

Partners hold rows 1-172, 173-354 and 355-506 of the data, the model
carries two site indicators and the binary outcome is ``medv >= 21``.
"""

from __future__ import annotations

import pytest

from conftest import boston_spec
from distreg.local import run_local


def close(printed: float, digits: int):
    return pytest.approx(printed, abs=0.5 * 10 ** -digits + 1e-12)


@pytest.fixture(scope="module")
def linear(boston_contiguous, tmp_path_factory):
    return run_local(boston_spec(1), boston_contiguous, tmp_path_factory.mktemp("lin"))[0]


@pytest.fixture(scope="module")
def logistic(boston_contiguous, tmp_path_factory):
    return run_local(boston_spec(2), boston_contiguous, tmp_path_factory.mktemp("log"))[0]


@pytest.fixture(scope="module")
def logistic_unit_bins(boston_contiguous, tmp_path_factory):
    spec = boston_spec(2, min_count_per_grp_glob=1)
    return run_local(spec, boston_contiguous, tmp_path_factory.mktemp("log1"))[0]


LINEAR_FIT = {
    "Root MSE": 7.475420, "Dependent Mean": 22.532806, "Coeff Var": 33.175717,
    "R-Square": 0.345895, "Adj R-Sq": 0.339354, "AIC": 2041.723909, "BIC": 2043.867621,
    "SBC": 2067.083129,
}

# estimate, SE, lower, upper, robust SE, robust lower, robust upper
LINEAR_EST = {
    "Intercept": (31.79302, 1.68240, 28.48757, 35.09847, 1.55065, 28.74642, 34.83962),
    "crim": (-0.23283, 0.04755, -0.32626, -0.13940, 0.04661, -0.32440, -0.14125),
    "indus": (-0.51302, 0.08165, -0.67343, -0.35260, 0.07754, -0.66537, -0.36066),
    "dis": (-1.05423, 0.22632, -1.49888, -0.60957, 0.21689, -1.48036, -0.62809),
    "dummy_dp_var2": (4.62054, 0.88611, 2.87958, 6.36150, 0.76374, 3.12002, 6.12107),
    "dummy_dp_var3": (-1.22053, 1.04369, -3.27109, 0.83003, 1.09139, -3.36481, 0.92375),
}
LINEAR_P = {"dummy_dp_var3": (0.2428, 0.2640)}

LOGISTIC_FIT = {
    "Log Likelihood": -261.03195, "AIC": 534.06390, "AICC": 534.23223, "BIC": 559.42312,
    "R-Square": 0.29797, "Max-rescaled R-Square": 0.39740,
}

LOGISTIC_EST = {
    "Intercept": (1.68778, 0.53174, 0.64558, 2.72998, 0.49189, 0.72370, 2.65186),
    "crim": (-0.15315, 0.04653, -0.24435, -0.06195, 0.04258, -0.23660, -0.06970),
    "indus": (-0.10329, 0.02570, -0.15366, -0.05292, 0.02383, -0.14999, -0.05659),
    "dis": (-0.16344, 0.07341, -0.30732, -0.01956, 0.07045, -0.30152, -0.02536),
    "dummy_dp_var2": (1.33919, 0.27156, 0.80694, 1.87144, 0.26679, 0.81629, 1.86209),
    "dummy_dp_var3": (0.31595, 0.37325, -0.41560, 1.04750, 0.38528, -0.43919, 1.07109),
}
# model p-value (7 decimals as printed), robust p-value (4 decimals)
LOGISTIC_P = {
    "Intercept": (0.0015033, 0.0006), "crim": (0.0009974, 0.0003), "indus": (0.0000583, None),
    "dis": (0.0259855, 0.0203), "dummy_dp_var2": (8.1622e-7, None), "dummy_dp_var3": (0.3972768, 0.4122),
}


def _rows(out):
    return {r.name: r for r in out.inference}


def _check_estimates(out, expected):
    rows = _rows(out)
    assert list(rows) == list(expected)
    for name, (est, se, lo, hi, rse, rlo, rhi) in expected.items():
        r = rows[name]
        got = (r.estimate, r.se, r.lower, r.upper, r.robust_se, r.robust_lower, r.robust_upper)
        assert got == tuple(close(v, 5) for v in (est, se, lo, hi, rse, rlo, rhi)), name


def test_linear_fit_statistics(linear):
    fit = dict(linear.fit.rows())
    for key, value in LINEAR_FIT.items():
        assert fit[key] == close(value, 6), key


def test_linear_estimates(linear):
    _check_estimates(linear, LINEAR_EST)
    r = _rows(linear)
    assert r["dummy_dp_var3"].p_value == close(LINEAR_P["dummy_dp_var3"][0], 4)
    assert r["dummy_dp_var3"].robust_p_value == close(LINEAR_P["dummy_dp_var3"][1], 4)
    assert all(r[n].p_value < 1e-4 and r[n].robust_p_value < 1e-4 for n in ("Intercept", "crim", "indus", "dis"))


def test_linear_needs_two_exchanges(linear):
    assert linear.iterations == 1 and linear.exchanges == 2 and linear.converged


def test_logistic_fit_statistics(logistic):
    fit = dict(logistic.fit.rows())
    for key, value in LOGISTIC_FIT.items():
        assert fit[key] == close(value, 5), key


def test_logistic_estimates(logistic):
    _check_estimates(logistic, LOGISTIC_EST)
    rows = _rows(logistic)
    for name, (p, rp) in LOGISTIC_P.items():
        # printed with 7 decimals, or 5 significant digits in exponent form
        want = pytest.approx(p, rel=5e-5) if p < 1e-6 else close(p, 7)
        assert rows[name].p_value == want, name
        if rp is None:
            assert rows[name].robust_p_value < 1e-4
        else:
            assert rows[name].robust_p_value == close(rp, 4), name


def test_hosmer_lemeshow_with_floor_six(logistic):
    assert logistic.hl.df == 8
    assert logistic.hl.chi_sq == close(15.43980, 5)
    assert logistic.hl.value_df == close(1.9299754, 7)
    assert logistic.hl.p_value == close(0.0511, 4)


def test_hosmer_lemeshow_with_unit_bins(logistic_unit_bins):
    hl = logistic_unit_bins.hl
    assert hl.df == 8
    assert hl.chi_sq == close(15.87051, 5)
    assert hl.value_df == close(1.9838143, 7)
    assert hl.p_value == close(0.0443, 4)
