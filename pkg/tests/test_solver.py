from __future__ import annotations

import math

import numpy as np
import pytest

from distreg.errors import (
    CollinearityError,
    InsufficientDataError,
    NumericalFailure,
    ProtocolError,
)
from distreg.model_core import LINEAR, local_sscp, robust_weight
from distreg.solver import (
    IterationState,
    SscpMatrix,
    check_convergence,
    combine_sscp,
    condition_diagnostic,
    estimate_dispersion,
    hc1_factor,
    model_covariance,
    robust_covariance,
    solve_wls,
)


def _sscp(z, y, w=None, labels=None):
    z = np.asarray(z, float)
    w = np.ones(len(z)) if w is None else np.asarray(w, float)
    labels = labels or tuple(f"c{i}" for i in range(z.shape[1]))
    return local_sscp(z, w, labels, y=np.asarray(y, float))


def test_csv_round_trip_is_exact():
    rng = np.random.default_rng(0)
    m = _sscp(rng.normal(size=(9, 3)), rng.normal(size=9), rng.uniform(size=9))
    back = SscpMatrix.from_csv(m.to_csv())
    assert back.labels == m.labels
    assert np.array_equal(back.values, m.values)
    assert back.n_obs == 9 and back.sum_weights == m.sum_weights


def test_from_csv_requires_sidecar_rows():
    with pytest.raises(ProtocolError):
        SscpMatrix.from_csv(b"_TYPE_,_NAME_,a\nSSCP,a,1\n")


class TestCombine:
    def test_zero_part_is_identity(self):
        m = _sscp([[1.0, 2.0]], [3.0])
        zero = SscpMatrix(m.labels, np.zeros_like(m.values))
        out = combine_sscp([m, zero])
        assert np.array_equal(out.values, m.values)

    def test_random_parts_sum(self):
        rng = np.random.default_rng(2)
        parts = [SscpMatrix("abcd", rng.normal(size=(4, 4)), 3, 1.5) for _ in range(3)]
        out = combine_sscp(parts)
        expected = np.zeros((4, 4))
        for p in parts:
            expected += p.values
        assert np.array_equal(out.values, expected)
        assert out.n_obs == 9 and out.sum_weights == 4.5

    def test_label_mismatch_names_partner(self):
        a = SscpMatrix("ab", np.eye(2))
        b = SscpMatrix("ac", np.eye(2))
        with pytest.raises(ProtocolError, match="partner 7"):
            combine_sscp([a, b], [3, 7])


class TestSolve:
    def test_two_point_line(self):
        beta, inv, sse = solve_wls(_sscp([[1, 0], [1, 1]], [1, 3]))
        assert beta == pytest.approx([1.0, 2.0], abs=1e-14)
        assert sse == pytest.approx(0.0, abs=1e-12)

    def test_matches_numpy_lstsq_and_inverse(self):
        rng = np.random.default_rng(11)
        z = np.column_stack([np.ones(40), rng.normal(size=(40, 3))])
        y = rng.normal(size=40)
        w = rng.uniform(0.5, 2, size=40)
        beta, inv, sse = solve_wls(_sscp(z, y, w))
        sw = np.sqrt(w)
        ref, *_ = np.linalg.lstsq(z * sw[:, None], y * sw, rcond=None)
        assert np.allclose(beta, ref, rtol=1e-12, atol=1e-13)
        assert np.allclose(inv, np.linalg.inv(z.T @ (z * w[:, None])), rtol=1e-11)
        assert sse == pytest.approx(float(np.sum(w * (y - z @ ref) ** 2)), rel=1e-10)

    def test_duplicated_column_named(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=10)
        z = np.column_stack([np.ones(10), x, x])
        with pytest.raises(CollinearityError) as err:
            solve_wls(_sscp(z, rng.normal(size=10), labels=("Intercept", "x", "x_copy")))
        assert "x" in str(err.value)
        assert err.value.exit_code == 4

    def test_zero_column(self):
        z = np.column_stack([np.ones(5), np.zeros(5)])
        with pytest.raises(CollinearityError, match="c1"):
            solve_wls(_sscp(z, np.arange(5.0)))


class TestDispersionAndCovariance:
    def test_direct_quotient(self):
        assert estimate_dispersion(False, 12.0, 8, 2) == 2.0

    def test_logistic_fixed(self):
        assert estimate_dispersion(True, 123.0, 50, 3) == 1.0

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            estimate_dispersion(False, 1.0, 3, 3)

    def test_phi_one_is_identity(self):
        inv = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert np.array_equal(model_covariance(inv, 1.0), inv)

    def test_negative_diagonal(self):
        with pytest.raises(NumericalFailure):
            model_covariance(np.array([[-1.0]]), 1.0)

    def test_robust_shape_mismatch(self):
        with pytest.raises(ProtocolError):
            robust_covariance(np.eye(2), np.eye(3))

    def test_linear_sandwich_equals_direct_hc1(self):
        rng = np.random.default_rng(8)
        n = 60
        z = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = z @ [1.0, -2.0, 0.5] + rng.normal(size=n) * (1 + np.abs(z[:, 1]))
        beta, inv, sse = solve_wls(_sscp(z, y))
        phi = estimate_dispersion(False, sse, n, 3)
        wh = robust_weight(LINEAR, y, z @ beta, np.ones(n), phi)
        meat = hc1_factor(n, 3) * local_sscp(z, wh, "abc").values
        cov = robust_covariance(phi * inv, meat)
        xtx_inv = np.linalg.inv(z.T @ z)
        e = y - z @ beta
        direct = n / (n - 3) * xtx_inv @ (z.T @ (z * (e ** 2)[:, None])) @ xtx_inv
        assert np.allclose(cov, direct, rtol=1e-9, atol=0)

    def test_homoscedastic_robust_close_to_model(self):
        rng = np.random.default_rng(20240501)
        n = 20000
        z = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = z @ [0.5, 1.0, -1.0] + rng.normal(size=n)
        beta, inv, sse = solve_wls(_sscp(z, y))
        phi = estimate_dispersion(False, sse, n, 3)
        wh = robust_weight(LINEAR, y, z @ beta, np.ones(n), phi)
        rob = robust_covariance(phi * inv, hc1_factor(n, 3) * local_sscp(z, wh, "abc").values)
        se_model = np.sqrt(np.diag(phi * inv))
        se_rob = np.sqrt(np.diag(rob))
        assert np.all(np.abs(se_rob / se_model - 1) < 0.10)


class TestConvergence:
    def test_relative_branch(self):
        ok, d = check_convergence(np.array([1.0]), np.array([1.00005]), 1e-4)
        assert ok and abs(d[0]) == pytest.approx(5e-5)

    def test_absolute_branch(self):
        ok, d = check_convergence(np.array([0.005]), np.array([0.00509]), 1e-4)
        assert ok and abs(d[0]) == pytest.approx(9e-5)

    def test_fixpoint(self):
        ok, d = check_convergence(np.array([3.0, -0.001]), np.array([3.0, -0.001]), 1e-12)
        assert ok and not d.any()

    def test_strict_inequality(self):
        ok, _ = check_convergence(np.array([0.0]), np.array([0.5]), 0.5)
        assert not ok

    def test_iteration_state_history(self):
        st = IterationState(np.zeros(2))
        st.advance(np.ones(2), np.array([1.0, -2.0]), False)
        assert st.iteration == 1 and len(st.history) == 2
        assert st.history[0][2] != st.history[0][2]  # NaN for the start
        assert st.history[1][2] == 2.0


class TestCondition:
    def test_identity(self):
        m = SscpMatrix("abc", np.eye(3))
        assert condition_diagnostic(m, has_outcome=False) == pytest.approx(1.0)

    def test_duplicated_column_is_infinite(self):
        x = np.arange(1.0, 6.0)
        z = np.column_stack([np.ones(5), x, x])
        assert math.isinf(condition_diagnostic(local_sscp(z, np.ones(5), "abc"), has_outcome=False))

    def test_non_positive_diagonal(self):
        with pytest.raises(CollinearityError):
            condition_diagnostic(SscpMatrix("ab", np.diag([1.0, 0.0])), has_outcome=False)

    def test_matches_power_iteration(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(4, 4))
        spd = a @ a.T + 0.5 * np.eye(4)
        s = 1 / np.sqrt(np.diag(spd))
        scaled = spd * s[:, None] * s[None, :]

        def power(mat, iters=5000):
            v = np.ones(4)
            for _ in range(iters):
                v = mat @ v
                v /= np.linalg.norm(v)
            return float(v @ mat @ v)

        lam_max = power(scaled)
        lam_min = 1.0 / power(np.linalg.inv(scaled))
        got = condition_diagnostic(SscpMatrix("abcd", spd), has_outcome=False)
        assert got == pytest.approx(lam_max / lam_min, rel=1e-6)
