from __future__ import annotations

from pathlib import Path

import pytest

from distreg.config import ModelSpec
from distreg.datasets import BOSTON_SIZES, boston_path
from distreg.partition import partition_csv

COVARIATES = "crim indus dis dummy_dp_var2 dummy_dp_var3"


def boston_spec(regr_type_cd: int, run_id: str = "dr", **extra) -> ModelSpec:
    raw = dict(
        RunID=run_id, reg_ds_in="boston", dp_cd_list="1 2 3", regr_type_cd=regr_type_cd,
        dependent_vars="medv" if regr_type_cd == 1 else "medv_high_flag",
        independent_vars=COVARIATES, test_env_cd=1,
    )
    raw.update(extra)
    return ModelSpec.from_mapping(raw)


@pytest.fixture(scope="session")
def boston_contiguous(tmp_path_factory) -> Path:
    """Rows 1-172, 173-354 and 355-506 as partners 1, 2 and 3, with site dummies."""
    d = tmp_path_factory.mktemp("boston_contiguous")
    partition_csv(boston_path(), d, "boston", sizes=BOSTON_SIZES, shuffle=False, dummies=True)
    return d


@pytest.fixture(scope="session")
def boston_random(tmp_path_factory):
    def make(seed: int, sizes=BOSTON_SIZES, k=None, dummies=True) -> Path:
        d = tmp_path_factory.mktemp(f"boston_seed{seed}")
        partition_csv(boston_path(), d, "boston", sizes=sizes if k is None else None, k=k,
                      seed=seed, dummies=dummies)
        return d
    return make


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        title = name.split("_", 3)[3].replace("_", " ")
        _ACCEPTANCE[num] = (report.outcome, title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        outcome, title = _ACCEPTANCE[num]
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {mark}  {title}")
