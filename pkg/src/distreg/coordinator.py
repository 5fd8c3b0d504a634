"""Analysis-center orchestration.

The coordinator broadcasts parameters and the current coefficients,
waits for every partner's SSCP, solves, and repeats until the XCONV
criterion holds.  One more exchange at the converged estimate collects
the information matrix at beta-hat, the robust SSCP, final sums and
the binned residual summaries.  Partner payloads are always merged in
ascending ``dp_cd`` order before any arithmetic, so results do not
depend on arrival order or transport.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from . import protocol as proto
from .config import ModelSpec
from .errors import (
    ConfigurationError,
    DataError,
    DistRegError,
    NonConvergenceError,
    PartnerFailure,
    ProtocolError,
)
from .fit_stats import (
    FitReport,
    InferenceRow,
    SiteStatContribution,
    anova_table,
    global_null_test,
    inference_table,
    linear_fit_stats,
    logistic_fit_stats,
    total_contributions,
)
from .model_core import WORKING_OUTCOME
from .solver import (
    CONDITION_WARN,
    CovarianceBundle,
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
from .summaries import (
    HL_PARTITION_COLUMNS,
    ROC_COLUMNS,
    BinSummary,
    HLResult,
    RocResult,
    bins_from_csv,
    bins_to_csv,
    hl_from_bins,
    roc_curve,
)
from .tables import encode_csv, fmt, write_bytes
from .worker import (
    BETA_FILE,
    FINAL_STATS_FILE,
    PCT2_FILE,
    PCT_FILE,
    ROBUST_SSCP_FILE,
    SITE_STATS_FILE,
    SSCP_FILE,
    decode_coefficients,
    decode_stats,
    encode_coefficients,
)

log = logging.getLogger(__name__)


class Phase(Enum):
    INIT = "init"
    ITERATE = "iterate"
    EXTRA = "extra_iteration"
    FINALIZE = "finalize"
    DONE = "done"
    FAILED = "failed"


@dataclass
class HistoryRow:
    iteration: int
    beta: np.ndarray
    max_delta: float
    loglik: float | None = None


@dataclass
class FitOutputs:
    """Everything a finished run reports."""

    spec: ModelSpec
    names: tuple[str, ...]
    beta: np.ndarray
    converged: bool
    iterations: int
    exchanges: int
    history: list[HistoryRow]
    cov: CovarianceBundle
    fit: FitReport
    inference: list[InferenceRow]
    totals: SiteStatContribution
    condition: float
    anova: tuple | None = None
    global_null: tuple | None = None
    bins_pct: list[BinSummary] | None = None
    bins_pct2: list[BinSummary] | None = None
    roc: RocResult | None = None
    hl: HLResult | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def n_obs(self) -> float:
        return self.totals.n_obs

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov.model_cov))

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov.robust_cov))


def build_params(spec: ModelSpec, iteration: int, final: bool, dispersion: float | None = None,
                 ybar: float | None = None) -> proto.ParamSet:
    p = proto.ParamSet()
    p["RunID"] = spec.run_id
    p["reg_ds_in"] = spec.reg_ds_in
    p["regr_type_cd"] = str(spec.regr_type_cd)
    p["dependent_vars"] = spec.dependent_var
    p["independent_vars"] = " ".join(spec.independent_vars)
    p["NOINT"] = "1" if spec.noint else "0"
    p["freq"] = spec.freq or ""
    p["weight"] = spec.weight or ""
    p["groups"] = str(spec.groups)
    p["min_count_per_grp_glob"] = str(spec.min_count_per_grp_glob)
    p["max_numb_of_grp"] = str(spec.max_numb_of_grp)
    p["test_env_cd"] = str(spec.test_env_cd)
    p["iter_nb"] = str(iteration)
    p["last_iter_in"] = "1" if final else "0"
    p["end_job_dp_in"] = "1" if final else "0"
    if dispersion is not None:
        p["dispersion"] = fmt(dispersion)
    if ybar is not None:
        p["dependent_mean"] = fmt(ybar)
    return p


def load_initial_estimates(spec: ModelSpec, base_dir: Path | None = None) -> np.ndarray:
    """Starting coefficients: the ``tbl_intial_est`` table or all zeros."""
    names = spec.coef_names
    if not spec.tbl_intial_est:
        return np.zeros(len(names))
    path = Path(spec.tbl_intial_est)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read initial estimates {path}: {exc}") from exc
    try:
        return decode_coefficients(data, names)
    except ProtocolError as exc:
        raise ConfigurationError(f"initial estimates {path}: {exc}") from exc


class Coordinator:
    """Drives one regression through a channel; see ``run``."""

    def __init__(self, spec: ModelSpec, channel, beta0=None):
        self.spec = spec
        self.channel = channel
        self.names = spec.coef_names
        self.partners = tuple(sorted(spec.dp_cd_list))
        beta0 = np.zeros(len(self.names)) if beta0 is None else np.asarray(beta0, dtype=float)
        if beta0.shape != (len(self.names),):
            raise ConfigurationError(f"initial estimates have length {beta0.size}, model has {len(self.names)}")
        self.state = IterationState(beta0.copy())
        self.phase = Phase.INIT
        self.exchanges = 0
        self.loglik: dict[int, float] = {}
        self._n_obs: dict[int, float] = {}

    # -- exchange helpers ---------------------------------------------------
    def _exchange(self, params: proto.ParamSet, beta: np.ndarray, tag: str) -> dict[int, dict[str, bytes]]:
        files = {
            proto.PARAMS_FILE: proto.encode_params(params),
            BETA_FILE: encode_coefficients(self.names, beta),
        }
        self.channel.broadcast(files, tag)
        got = self.channel.gather(tag)
        self.exchanges += 1
        if sorted(got) != list(self.partners):
            raise ProtocolError(f"expected payloads from {list(self.partners)}, got {sorted(got)}")
        return {k: got[k] for k in self.partners}

    def _part(self, k: int, payload: Mapping[str, bytes], name: str) -> bytes:
        try:
            return payload[name]
        except KeyError:
            raise ProtocolError(f"partner {k} payload lacks {name}") from None

    def _sscp(self, payloads, name: str, with_outcome: bool) -> SscpMatrix:
        parts = []
        want = self.names + ((WORKING_OUTCOME,) if with_outcome else ())
        for k, payload in payloads.items():
            m = SscpMatrix.from_csv(self._part(k, payload, name))
            if m.labels != want:
                raise ProtocolError(f"partner {k} {name} labels {list(m.labels)} differ from {list(want)}")
            seen = self._n_obs.setdefault(k, m.n_obs)
            if m.n_obs != seen:
                raise ProtocolError(
                    f"partner {k} reported N={m.n_obs} after N={seen}; the analytic data must not change"
                )
            parts.append(m)
        return combine_sscp(parts, list(payloads))

    def _stats(self, payloads, name: str) -> SiteStatContribution:
        return total_contributions(decode_stats(self._part(k, p, name)) for k, p in payloads.items())

    def _bins(self, payloads, name: str) -> list[BinSummary]:
        out = []
        for k, p in payloads.items():
            bins = bins_from_csv(self._part(k, p, name))
            for b in bins:
                if b.partner_id != k:
                    raise ProtocolError(f"partner {k} sent bins labelled dp_cd={b.partner_id}")
            out.extend(bins)
        return out

    # -- main loop ----------------------------------------------------------
    def run(self) -> FitOutputs:
        spec = self.spec
        p = len(self.names)
        self.phase = Phase.ITERATE
        last_sse = None
        stats = None
        while True:
            m = self.state.iteration
            payloads = self._exchange(build_params(spec, m, False), self.state.beta, f"iter{m:03d}")
            combined = self._sscp(payloads, SSCP_FILE, True)
            stats = self._stats(payloads, SITE_STATS_FILE)
            if spec.is_logistic:
                self.loglik[m] = stats.loglik
            beta_new, _, last_sse = solve_wls(combined)
            if spec.is_logistic:
                converged, deltas = check_convergence(self.state.beta, beta_new, spec.xconv)
            else:
                # the linear model is solved exactly in one pass
                _, deltas = check_convergence(self.state.beta, beta_new, spec.xconv)
                converged = True
            self.state.advance(beta_new, deltas, converged)
            log.info("iteration %d: max |delta| = %.3e", self.state.iteration,
                     float(np.max(np.abs(deltas))) if len(deltas) else 0.0)
            if converged:
                break
            if self.state.iteration >= spec.max_iter_nb:
                raise NonConvergenceError(
                    f"no convergence after {self.state.iteration} iterations "
                    f"(max |delta| {float(np.max(np.abs(deltas))):.3e}, xconv {spec.xconv})"
                )

        n_obs = combined.n_obs
        ybar = stats.sum_y / stats.sum_weights if stats.sum_weights > 0 else math.nan
        phi_sent = estimate_dispersion(spec.is_logistic, last_sse, n_obs, p)
        if not spec.is_logistic and not phi_sent > 0:
            # perfect fit: the sandwich weights vanish anyway, any positive scale will do
            phi_sent = 1.0

        self.phase = Phase.EXTRA
        beta_hat = self.state.beta
        payloads = self._exchange(
            build_params(spec, self.state.iteration, True, phi_sent, ybar), beta_hat, "final"
        )
        self.phase = Phase.FINALIZE
        final_sscp = self._sscp(payloads, SSCP_FILE, True)
        robust_sscp = self._sscp(payloads, ROBUST_SSCP_FILE, False)
        totals = self._stats(payloads, FINAL_STATS_FILE)
        if spec.is_logistic:
            self.loglik[self.state.iteration] = totals.loglik
        bins_pct = self._bins(payloads, PCT_FILE)
        bins_pct2 = self._bins(payloads, PCT2_FILE)
        return self._finalize(beta_hat, final_sscp, robust_sscp, totals, phi_sent, bins_pct, bins_pct2)

    def _finalize(self, beta_hat, final_sscp, robust_sscp, totals, phi_sent, bins_pct, bins_pct2) -> FitOutputs:
        spec = self.spec
        p = len(self.names)
        n = totals.n_obs
        _, inv, _ = solve_wls(final_sscp)
        sigma2 = estimate_dispersion(spec.is_logistic, totals.sse, n, p)
        dispersion = 1.0 if spec.is_logistic else sigma2
        model_cov = model_covariance(inv, dispersion)
        meat = hc1_factor(n, p) * robust_sscp.values
        robust = robust_covariance(phi_sent * inv, meat)
        cov = CovarianceBundle(model_cov, robust, inv, dispersion,
                               None if spec.is_logistic else sigma2)
        ybar = totals.sum_y / totals.sum_weights
        warnings: list[str] = []
        anova = glob_null = None
        if spec.is_logistic:
            fit = logistic_fit_stats(totals.loglik, n, p, ybar, totals.sum_weights, spec.intercept)
            glob_null = global_null_test(
                totals.loglik, fit["Intercept-only Log Likelihood"], p - 1 if spec.intercept else p
            )
        else:
            sst = totals.sst if spec.intercept else totals.sum_y_sq
            fit = linear_fit_stats(totals.sse, sst, n, p, sigma2, spec.intercept, ybar)
            anova = anova_table(totals.sse, sst, n, p, spec.intercept)
        inference = inference_table(beta_hat, self.names, model_cov, robust, spec.alpha,
                                    spec.is_logistic, n, p)
        condition = condition_diagnostic(final_sscp)
        if condition >= CONDITION_WARN:
            warnings.append(f"design is ill-conditioned (condition number {condition:.3e})")
        roc = hl = None
        if spec.is_logistic:
            try:
                roc = roc_curve(bins_pct2)
            except DataError as exc:
                warnings.append(f"ROC not computed: {exc}")
            try:
                hl = hl_from_bins(bins_pct2, spec.groups)
            except DataError as exc:
                warnings.append(f"Hosmer-Lemeshow test not computed: {exc}")
        for w in warnings:
            log.warning(w)
        history = [
            HistoryRow(m, beta, delta, self.loglik.get(m)) for m, beta, delta in self.state.history
        ]
        self.phase = Phase.DONE
        return FitOutputs(
            spec=spec, names=self.names, beta=beta_hat, converged=self.state.converged,
            iterations=self.state.iteration, exchanges=self.exchanges, history=history,
            cov=cov, fit=fit, inference=inference, totals=totals, condition=condition,
            anova=anova, global_null=glob_null, bins_pct=bins_pct, bins_pct2=bins_pct2,
            roc=roc, hl=hl, warnings=warnings,
        )

    def history_rows(self) -> list[HistoryRow]:
        return [HistoryRow(m, b, d, self.loglik.get(m)) for m, b, d in self.state.history]


# -- output tables -----------------------------------------------------------

def _matrix_table(names, mat) -> bytes:
    return encode_csv(["Variable", *names], ([n, *row] for n, row in zip(names, mat)))


def _estimate_table(rows: list[InferenceRow], is_logistic: bool, robust: bool) -> bytes:
    stat, prob = ("zValue", "ProbZ") if is_logistic else ("tValue", "Probt")
    if robust:
        header = ["Variable", "DF", "Estimate", "HCStdErr", f"HC{stat}", f"HC{prob}", "HCLowerCL", "HCUpperCL"]
        body = ([r.name, 1, r.estimate, r.robust_se, r.robust_stat, r.robust_p_value,
                 r.robust_lower, r.robust_upper] for r in rows)
    else:
        header = ["Variable", "DF", "Estimate", "StdErr", stat, prob, "LowerCL", "UpperCL"]
        body = ([r.name, 1, r.estimate, r.se, r.stat, r.p_value, r.lower, r.upper] for r in rows)
    return encode_csv(header, body)


def history_table(names, history: list[HistoryRow]) -> bytes:
    return encode_csv(
        ["Iteration", *names, "MaxAbsDelta", "LogLikelihood"],
        ([h.iteration, *h.beta, h.max_delta, h.loglik] for h in history),
    )


def convergence_table(converged: bool, iterations: int, exchanges: int, xconv: float,
                      max_delta: float, status: str) -> bytes:
    return encode_csv(["Statistic", "Value"], [
        ["Status", status],
        ["Converged", int(converged)],
        ["Iterations", iterations],
        ["Exchanges", exchanges],
        ["Criterion", xconv],
        ["LastMaxAbsDelta", max_delta],
    ])


def resid_sum_rows(totals: SiteStatContribution, is_logistic: bool) -> list[list]:
    sw = totals.sum_weights
    rows = [
        ["N", totals.n_obs],
        ["Records", totals.n_rows],
        ["Sum of Weights", sw],
        ["Mean Observed", totals.sum_y / sw],
        ["Mean Predicted", totals.sum_mu / sw],
        ["Mean Residual", (totals.sum_y - totals.sum_mu) / sw],
        ["Sum of Squared Residuals", totals.sse],
    ]
    if is_logistic:
        rows.append(["Log Likelihood", totals.loglik])
    return rows


def output_tables(out: FitOutputs) -> dict[str, bytes]:
    """Render every output dataset; keys are the suffixes after ``<prefix>_``."""
    spec = out.spec
    names = out.names
    t: dict[str, bytes] = {}
    t["p_est"] = _estimate_table(out.inference, spec.is_logistic, robust=False)
    t["p_est_hc"] = _estimate_table(out.inference, spec.is_logistic, robust=True)
    t["cov_est"] = _matrix_table(names, out.cov.model_cov)
    t["hc_cov"] = _matrix_table(names, out.cov.robust_cov)
    t["invxpx"] = _matrix_table(names, out.cov.xpx_inverse)
    t["modelfit"] = encode_csv(["Statistic", "Value"], out.fit.rows())
    t["model_coeff"] = encode_coefficients(names, out.beta)
    t["iter_params_hist"] = history_table(names, out.history)
    last = out.history[-1].max_delta if out.history else math.nan
    t["convrg_status"] = convergence_table(out.converged, out.iterations, out.exchanges, spec.xconv,
                                           last, "converged" if out.converged else "not converged")
    t["condition"] = encode_csv(["Statistic", "Value"], [
        ["Condition Number", out.condition],
        ["Ill-conditioned", int(out.condition >= CONDITION_WARN)],
    ])
    if out.global_null is not None:
        stat, df, pv = out.global_null
        t["glob_null_chisq"] = encode_csv(["Test", "ChiSq", "DF", "ProbChiSq"],
                                          [["Likelihood Ratio", stat, df, pv]])
    if out.anova is not None:
        rows, f_value, p_value = out.anova
        t["anova"] = encode_csv(
            ["Source", "DF", "SumOfSquares", "MeanSquare", "FValue", "ProbF"],
            ([src, df, ss, ms, f_value if src == "Model" else None, p_value if src == "Model" else None]
             for src, df, ss, ms in rows),
        )
    t["resid_sum"] = encode_csv(["Statistic", "Value"], resid_sum_rows(out.totals, spec.is_logistic))
    if out.bins_pct is not None:
        t["resid_sum_by_pct"] = bins_to_csv(out.bins_pct)
    if out.bins_pct2 is not None:
        t["resid_sum_by_pct2"] = bins_to_csv(out.bins_pct2)
    if out.roc is not None:
        t["roc"] = encode_csv(ROC_COLUMNS, out.roc.rows())
    if out.hl is not None:
        t["hl_chisq"] = encode_csv(["ChiSq", "DF", "ValueDF", "ProbChiSq"],
                                   [[out.hl.chi_sq, out.hl.df, out.hl.value_df, out.hl.p_value]])
        t["hl_partition"] = encode_csv(HL_PARTITION_COLUMNS, out.hl.partition)
    return t


def emit_outputs(out: FitOutputs, out_dir: Path, prefix: str | None = None) -> list[Path]:
    prefix = prefix or out.spec.run_id
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for suffix, data in output_tables(out).items():
        path = out_dir / f"{prefix}_{suffix}.csv"
        write_bytes(path, data)
        paths.append(path)
    return paths


def emit_failure(exc: BaseException, out_dir: Path, prefix: str, names, history: list[HistoryRow],
                 iterations: int, exchanges: int, xconv: float) -> list[Path]:
    """Failure report plus whatever iteration history exists; no estimates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    partner = exc.dp_cd if isinstance(exc, PartnerFailure) else None
    code = exc.exit_code if isinstance(exc, DistRegError) else 1
    files = {
        "failure": encode_csv(["Statistic", "Value"], [
            ["Status", "failed"],
            ["ErrorType", type(exc).__name__],
            ["ExitCode", code],
            ["Partner", partner],
            ["Message", str(exc)],
        ]),
        "iter_params_hist": history_table(names, history),
        "convrg_status": convergence_table(
            False, iterations, exchanges, xconv,
            history[-1].max_delta if history else math.nan, "failed",
        ),
    }
    paths = []
    for suffix, data in files.items():
        path = out_dir / f"{prefix}_{suffix}.csv"
        write_bytes(path, data)
        paths.append(path)
    return paths


def run_coordinator(spec: ModelSpec, channel, out_dir: Path | None = None, beta0=None) -> FitOutputs:
    """Run the whole regression; write outputs to ``out_dir`` when given.

    On failure the run emits a failure report (with the iteration history
    so far), signals ``job_fail.ok`` through the channel and re-raises.
    """
    coord = None
    try:
        coord = Coordinator(spec, channel, beta0)
        result = coord.run()
        if out_dir is not None:
            emit_outputs(result, out_dir)
    except Exception as exc:
        if coord is not None:
            coord.phase = Phase.FAILED
        if out_dir is not None:
            try:
                emit_failure(
                    exc, out_dir, spec.run_id, spec.coef_names,
                    coord.history_rows() if coord else [],
                    coord.state.iteration if coord else 0,
                    coord.exchanges if coord else 0, spec.xconv,
                )
            except OSError as io_exc:
                log.error("could not write failure report: %s", io_exc)
        try:
            channel.finish(False)
        except OSError as io_exc:
            log.error("could not signal failure: %s", io_exc)
        raise
    channel.finish(True)
    return result
