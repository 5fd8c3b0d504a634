"""Data-partner runtime.

A worker waits for the center's parameters and current coefficients,
scores its local records and answers with aggregates only: an SSCP
matrix and a handful of scalar sums per iteration, and on the stop
message the robust SSCP, final sums and privacy-binned residual
summaries.  The scored individual-level table stays in ``dplocal``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import protocol as proto
from .config import ModelSpec, WorkerConfig
from .errors import ConfigurationError, DataError, DistRegError, ExchangeTimeout, ProtocolError
from .fit_stats import SiteStatContribution
from .model_core import (
    AnalyticDataset,
    Design,
    FamilySpec,
    build_design,
    local_sscp,
    logistic_loglik,
    read_dataset,
    robust_weight,
    working_transform,
)
from .summaries import BinningPolicy, bins_to_csv, groups_for_site, residual_summary
from .tables import decode_csv, encode_csv, fmt, parse_float, write_bytes

log = logging.getLogger(__name__)

BETA_FILE = "beta.csv"
SSCP_FILE = "sscp.csv"
SITE_STATS_FILE = "site_stats.csv"
ROBUST_SSCP_FILE = "robust_sscp.csv"
FINAL_STATS_FILE = "site_stats_final.csv"
PCT_FILE = "resid_sum_by_pct.csv"
PCT2_FILE = "resid_sum_by_pct2.csv"

ITERATION_FILES = (SSCP_FILE, SITE_STATS_FILE)
FINAL_FILES = (SSCP_FILE, ROBUST_SSCP_FILE, FINAL_STATS_FILE, PCT_FILE, PCT2_FILE)


def encode_coefficients(names, beta) -> bytes:
    return encode_csv(list(names), [list(beta)])


def decode_coefficients(data: bytes, names) -> np.ndarray:
    """Read a one-row coefficient table and align it to ``names``."""
    header, rows = decode_csv(data)
    if len(rows) != 1:
        raise ProtocolError(f"coefficient table must have exactly one row, got {len(rows)}")
    lookup = {h.lower(): parse_float(v) for h, v in zip(header, rows[0])}
    missing = [n for n in names if n.lower() not in lookup]
    if missing:
        raise ProtocolError(f"coefficient table lacks {missing}")
    return np.array([lookup[n.lower()] for n in names], dtype=float)


def encode_stats(stats: SiteStatContribution) -> bytes:
    return encode_csv(["statistic", "value"], stats.to_rows())


def decode_stats(data: bytes) -> SiteStatContribution:
    header, rows = decode_csv(data)
    if header != ["statistic", "value"]:
        raise ProtocolError(f"site statistics header must be statistic,value, got {header}")
    return SiteStatContribution.from_rows({r[0]: parse_float(r[1]) for r in rows})


def spec_from_params(params: Mapping[str, str], dp_cd: int) -> ModelSpec:
    """Rebuild the model definition a partner needs from the parameter file."""
    raw = {
        "RunID": params.get("RunID", "run"),
        "reg_ds_in": params["reg_ds_in"],
        "dp_cd_list": str(dp_cd),
        "regr_type_cd": params["regr_type_cd"],
        "dependent_vars": params["dependent_vars"],
        "independent_vars": params["independent_vars"],
    }
    for key in ("NOINT", "freq", "weight", "groups", "test_env_cd", "max_numb_of_grp",
                "min_count_per_grp_glob"):
        if params.get(key, "") != "":
            raw[key] = params[key]
    try:
        return ModelSpec.from_mapping(raw)
    except ConfigurationError as exc:
        raise ProtocolError(f"parameter file describes an invalid model: {exc}") from exc


def _site_sums(design: Design, mu: np.ndarray) -> dict[str, float]:
    w = design.effective_weight
    y = design.y
    return dict(
        n_obs=float(design.n_obs),
        sum_weights=float(np.sum(w)),
        sum_y=float(np.sum(w * y)),
        sum_y_sq=float(np.sum(w * y * y)),
        sum_mu=float(np.sum(w * mu)),
        sse=float(np.sum(w * (y - mu) ** 2)),
        n_rows=float(len(design)),
    )


def iteration_payload(design: Design, family: FamilySpec, beta) -> dict[str, bytes]:
    """SSCP of the working data at ``beta`` plus the scalar sums."""
    wr = working_transform(family, design, beta)
    sscp = local_sscp(design.z, wr.w_tilde, design.labels, y=wr.y_tilde, n_obs=design.n_obs)
    w = design.effective_weight
    stats = SiteStatContribution(
        n_obs=float(design.n_obs),
        sum_weights=float(np.sum(w)),
        sum_y=float(np.sum(w * design.y)),
        sum_y_sq=float(np.sum(w * design.y ** 2)),
        n_rows=float(len(design)),
    )
    if family.is_logistic:
        # the linear payload stays independent of beta; its residual sums come at the end
        stats.sum_mu = float(np.sum(w * wr.mu))
        stats.sse = float(np.sum(w * (design.y - wr.mu) ** 2))
        stats.loglik = logistic_loglik(design.y, wr.eta, w)
    return {SSCP_FILE: sscp.to_csv(), SITE_STATS_FILE: encode_stats(stats)}


@dataclass
class FinalResult:
    files: dict[str, bytes]
    scored: bytes


def final_payload(
    design: Design,
    family: FamilySpec,
    beta_hat,
    phi: float,
    ybar: float,
    pct: BinningPolicy,
    pct2: BinningPolicy,
    dp_cd: int,
) -> FinalResult:
    """Everything the center needs after convergence.

    ``phi`` is the dispersion used in the sandwich weights and ``ybar``
    the pooled outcome mean used for the corrected total sum of squares.
    """
    wr = working_transform(family, design, beta_hat)
    sscp = local_sscp(design.z, wr.w_tilde, design.labels, y=wr.y_tilde, n_obs=design.n_obs)
    wh = robust_weight(family, design.y, wr.mu, design.weight, phi, design.freq)
    robust = local_sscp(design.z, wh, design.labels, n_obs=design.n_obs)
    w = design.effective_weight
    sums = _site_sums(design, wr.mu)
    stats = SiteStatContribution(
        **sums,
        sst=float(np.sum(w * (design.y - ybar) ** 2)),
        loglik=logistic_loglik(design.y, wr.eta, w) if family.is_logistic else 0.0,
    )
    resid = design.y - wr.mu
    variance = wr.v if family.is_logistic else np.full(len(design), phi)
    common = dict(freq=design.freq, binary_outcome=family.is_logistic)
    by_pct = residual_summary(wr.mu, design.y, resid, variance, pct, dp_cd, **common)
    by_pct2 = residual_summary(wr.mu, design.y, resid, variance, pct2, dp_cd, **common)
    files = {
        SSCP_FILE: sscp.to_csv(),
        ROBUST_SSCP_FILE: robust.to_csv(),
        FINAL_STATS_FILE: encode_stats(stats),
        PCT_FILE: bins_to_csv(by_pct),
        PCT2_FILE: bins_to_csv(by_pct2),
    }
    header = list(design.labels[1:] if design.labels[:1] == ("Intercept",) else design.labels)
    scored_cols = [design.z[:, list(design.labels).index(h)] for h in header]
    scored = encode_csv(
        header + ["y", "freq", "weight", "eta", "mu", "resid", "variance"],
        zip(*scored_cols, design.y, design.freq, design.weight, wr.eta, wr.mu, resid, variance),
    )
    return FinalResult(files, scored)


@dataclass
class Worker:
    """Message handler for one partner; transport-agnostic."""

    dp_cd: int
    data_in_dir: Path
    dplocal: Path | None = None
    min_count_per_grp: int | None = None
    exchanges: int = 0
    _data: dict[str, AnalyticDataset] = field(default_factory=dict, repr=False)

    @classmethod
    def from_config(cls, cfg: WorkerConfig, dplocal: Path | None = None) -> "Worker":
        return cls(cfg.dp_cd, Path(cfg.data_in_dir), dplocal, cfg.min_count_per_grp)

    def dataset_path(self, spec: ModelSpec) -> Path:
        name = f"{spec.reg_ds_in}_{self.dp_cd}" if spec.test_env_cd == 1 else spec.reg_ds_in
        exact = Path(self.data_in_dir) / f"{name}.csv"
        if exact.is_file():
            return exact
        want = f"{name}.csv".lower()
        if Path(self.data_in_dir).is_dir():
            for p in sorted(Path(self.data_in_dir).iterdir()):
                if p.name.lower() == want and p.is_file():
                    return p
        raise DataError(f"partner {self.dp_cd}: analytic dataset {exact} not found")

    def design(self, spec: ModelSpec) -> Design:
        path = self.dataset_path(spec)
        key = str(path)
        if key not in self._data:
            needed = list(spec.independent_vars) + [spec.dependent_var]
            needed += [v for v in (spec.freq, spec.weight) if v]
            self._data[key] = read_dataset(path, self.dp_cd, needed)
        return build_design(self._data[key], spec)

    def min_count(self, spec: ModelSpec) -> int:
        return self.min_count_per_grp if self.min_count_per_grp is not None else spec.min_count_per_grp_glob

    def handle(self, files: Mapping[str, bytes]) -> tuple[dict[str, bytes], bool]:
        """Answer one broadcast; returns ``(payload, is_final)``."""
        if proto.PARAMS_FILE not in files or BETA_FILE not in files:
            raise ProtocolError(f"broadcast lacks {proto.PARAMS_FILE} or {BETA_FILE}")
        params = proto.decode_params(files[proto.PARAMS_FILE])
        spec = spec_from_params(params, self.dp_cd)
        family = FamilySpec.from_code(spec.regr_type_cd)
        design = self.design(spec)
        beta = decode_coefficients(files[BETA_FILE], spec.coef_names)
        self.exchanges += 1
        if not params.flag("end_job_dp_in"):
            return iteration_payload(design, family, beta), False
        try:
            phi = float(params["dispersion"])
            ybar = float(params["dependent_mean"])
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"stop message lacks dispersion/dependent_mean: {exc}") from exc
        n_min = self.min_count(spec)
        pct = BinningPolicy(spec.groups, n_min, spec.max_numb_of_grp)
        n_grp2 = groups_for_site(design.n_obs, n_min, spec.max_numb_of_grp)
        pct2 = BinningPolicy(n_grp2, n_min, spec.max_numb_of_grp)
        result = final_payload(design, family, beta, phi, ybar, pct, pct2, self.dp_cd)
        if self.dplocal is not None:
            run_id = params.get("RunID", "run")
            write_bytes(Path(self.dplocal) / f"{run_id}_dp{self.dp_cd}_scored.csv", result.scored)
        return result.files, True


def run_worker(worker: Worker, channel) -> int:
    """Serve broadcasts until the stop message; returns a process exit code."""
    m = 0
    while True:
        try:
            files = channel.receive(f"x{m:03d}")
        except DistRegError as exc:
            log.error("partner %s: %s", worker.dp_cd, exc)
            _fail(channel, str(exc))
            return exc.exit_code
        try:
            payload, final = worker.handle(files)
        except DistRegError as exc:
            log.error("partner %s failed: %s", worker.dp_cd, exc)
            _fail(channel, str(exc))
            return exc.exit_code
        try:
            channel.send(payload)
            if final:
                channel.finish(True)
                return 0
        except DistRegError as exc:
            _fail(channel, str(exc))
            return exc.exit_code
        m += 1


def _fail(channel, note: str) -> None:
    try:
        channel.finish(False, note)
    except OSError as exc:  # nothing more we can do
        log.error("could not signal failure: %s", exc)


__all__ = [
    "Worker", "run_worker", "iteration_payload", "final_payload", "spec_from_params",
    "encode_coefficients", "decode_coefficients", "encode_stats", "decode_stats",
]
