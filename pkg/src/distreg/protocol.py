"""File exchange contract between the analysis center and data partners.

One exchange is a set of payload files, then ``file_list.csv`` naming
them (one relative name per line, LF, no header), then an empty
``files_done.ok`` written strictly last.  Consumers poll for the trigger,
check the manifest, move the payload into an archive folder and only
then delete the trigger, so the next exchange starts from a clean
directory.
"""

from __future__ import annotations

import logging
import os
import shutil
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import ExchangeTimeout, ProtocolError
from .tables import decode_csv, encode_csv, write_bytes

log = logging.getLogger(__name__)

TRIGGER = "files_done.ok"
MANIFEST = "file_list.csv"
JOB_DONE = "job_done.ok"
JOB_FAIL = "job_fail.ok"
PARAMS_FILE = "vars_nm_value_pairs.csv"
FAILURE_NOTE = "job_fail_reason.txt"
ARCHIVE = "_consumed"

REQUIRED_PARAMS = (
    "reg_ds_in", "independent_vars", "dependent_vars", "regr_type_cd",
    "iter_nb", "last_iter_in", "end_job_dp_in",
)
FLAG_PARAMS = ("last_iter_in", "end_job_dp_in")


@dataclass(frozen=True)
class RequestLayout:
    """Directory tree of one request at one party."""

    root: Path
    request_id: str = "request_1"
    partners: tuple[int, ...] = ()

    @property
    def base(self) -> Path:
        return Path(self.root) / self.request_id

    @property
    def dplocal(self) -> Path:
        return self.base / "dplocal"

    @property
    def inputfiles(self) -> Path:
        return self.base / "inputfiles"

    @property
    def msoc(self) -> Path:
        return self.base / "msoc"

    def partner_msoc(self, dp_cd: int) -> Path:
        return self.base / f"msoc{dp_cd}"

    def create(self) -> "RequestLayout":
        for d in (self.dplocal, self.inputfiles, self.msoc, *(self.partner_msoc(k) for k in self.partners)):
            d.mkdir(parents=True, exist_ok=True)
        return self

    def validate(self) -> None:
        missing = [str(d) for d in (self.dplocal, self.inputfiles, self.msoc,
                                    *(self.partner_msoc(k) for k in self.partners)) if not d.is_dir()]
        if missing:
            raise ProtocolError(f"request directories missing: {missing}")


class ParamSet(OrderedDict):
    """Ordered name/value pairs shipped as ``vars_nm_value_pairs.csv``."""

    def flag(self, name: str) -> bool:
        return self.get(name, "0") == "1"


def encode_params(params: Mapping[str, str]) -> bytes:
    return encode_csv(["M_var_nm", "M_var_value"], ([k, str(v)] for k, v in params.items()))


def decode_params(data: bytes) -> ParamSet:
    try:
        header, rows = decode_csv(data)
    except ValueError as exc:
        raise ProtocolError(f"parameter file is empty: {exc}") from exc
    if header != ["M_var_nm", "M_var_value"]:
        raise ProtocolError(f"parameter file header must be M_var_nm,M_var_value, got {header}")
    out = ParamSet()
    for row in rows:
        if len(row) != 2:
            raise ProtocolError(f"malformed parameter row {row}")
        name, value = row
        if name in out:
            raise ProtocolError(f"duplicate parameter {name!r}")
        out[name] = value
    missing = [k for k in REQUIRED_PARAMS if k not in out]
    if missing:
        raise ProtocolError(f"parameter file lacks required keys {missing}")
    for k in FLAG_PARAMS:
        if out[k] not in ("0", "1"):
            raise ProtocolError(f"parameter {k} must be 0 or 1, got {out[k]!r}")
    if out["regr_type_cd"] not in ("1", "2"):
        raise ProtocolError(f"regr_type_cd must be 1 or 2, got {out['regr_type_cd']!r}")
    return out


def _touch(path: Path) -> None:
    with open(path, "wb"):
        pass


def _touch_trigger(path: Path) -> None:
    _touch(path)


def write_exchange(directory: Path, files: Mapping[str, bytes]) -> list[str]:
    """Publish ``files`` into ``directory`` followed by manifest and trigger."""
    directory = Path(directory)
    trigger = directory / TRIGGER
    if trigger.exists():
        raise ProtocolError(f"stale trigger in {directory}: previous exchange not consumed")
    names = list(files)
    for name in names:
        if "/" in name or "\\" in name or name in (TRIGGER, MANIFEST):
            raise ProtocolError(f"illegal payload file name {name!r}")
        write_bytes(directory / name, files[name])
    write_bytes(directory / MANIFEST, "".join(f"{n}\n" for n in names).encode("utf-8"))
    _touch_trigger(trigger)
    return names


def read_manifest(directory: Path) -> list[str]:
    text = (Path(directory) / MANIFEST).read_text(encoding="utf-8")
    return [line for line in text.split("\n") if line]


def poll_intervals(wait_min: float, wait_max: float):
    interval = wait_min
    while True:
        yield interval
        interval = min(interval * 2, wait_max)


def watch_for_trigger(
    directory: Path,
    wait_min: float = 3.0,
    wait_max: float = 7200.0,
    deadline: float | None = None,
    also: Callable[[], None] | None = None,
) -> list[str]:
    """Block until ``files_done.ok`` appears.

    Polling starts every ``wait_min`` seconds and doubles up to
    ``wait_max``.  ``deadline`` is an absolute ``time.monotonic()`` value.
    ``also`` is called on every tick and may raise to abort the wait.
    Returns the manifest's file names after checking they all exist.
    The trigger stays in place until :func:`drain` has moved the payload,
    so a writer waiting on its absence cannot overwrite unread files.
    """
    directory = Path(directory)
    trigger = directory / TRIGGER
    for interval in poll_intervals(wait_min, wait_max):
        if also is not None:
            also()
        if trigger.exists():
            break
        now = time.monotonic()
        if deadline is not None and now >= deadline:
            raise ExchangeTimeout(f"timed out waiting for {trigger}")
        sleep = interval if deadline is None else min(interval, max(deadline - now, 0.0))
        time.sleep(sleep)
    names = read_manifest(directory)
    for name in names:
        if not (directory / name).is_file():
            raise ProtocolError(f"manifest in {directory} lists {name} which is absent")
    return names


def drain(directory: Path, names: Iterable[str], tag: str) -> dict[str, bytes]:
    """Read the consumed payload and move it (with the manifest) into the archive."""
    directory = Path(directory)
    dest = directory / ARCHIVE / tag
    dest.mkdir(parents=True, exist_ok=True)
    out = {}
    for name in list(names) + [MANIFEST]:
        src = directory / name
        if name != MANIFEST:
            out[name] = src.read_bytes()
        shutil.move(str(src), str(dest / name))
    (directory / TRIGGER).unlink(missing_ok=True)
    return out


def consume_exchange(directory: Path, tag: str, **watch) -> dict[str, bytes]:
    names = watch_for_trigger(directory, **watch)
    return drain(directory, names, tag)


def signal_terminal(directory: Path, success: bool) -> Path:
    name = JOB_DONE if success else JOB_FAIL
    path = Path(directory) / name
    _touch(path)
    return path


def terminal_state(directory: Path) -> str | None:
    """``"failure"`` if job_fail.ok exists (it dominates), ``"success"``, or None."""
    directory = Path(directory)
    if (directory / JOB_FAIL).exists():
        return "failure"
    if (directory / JOB_DONE).exists():
        return "success"
    return None


def relay_exchange(source: Path, destinations: Iterable[Path]) -> list[str]:
    """Act as the transfer agent over a shared filesystem.

    Copies the manifest's files from ``source`` to each destination,
    writes the destination trigger last, and removes the source trigger.
    """
    source = Path(source)
    if not (source / TRIGGER).exists():
        raise ProtocolError(f"nothing to relay in {source}")
    names = read_manifest(source)
    absent = [n for n in names if not (source / n).is_file()]
    if absent:
        raise ProtocolError(f"manifest in {source} lists {absent} which are absent")
    for dest in destinations:
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)  # the receiver may not have started yet
        if (dest / TRIGGER).exists():
            raise ProtocolError(f"stale trigger in {dest}: receiver has not drained")
        for name in names:
            write_bytes(dest / name, (source / name).read_bytes())
        write_bytes(dest / MANIFEST, (source / MANIFEST).read_bytes())
        _touch(dest / TRIGGER)
    (source / TRIGGER).unlink()
    return names


def relay_terminal(source: Path, dest: Path) -> None:
    Path(dest).mkdir(parents=True, exist_ok=True)
    for name in (FAILURE_NOTE, JOB_FAIL, JOB_DONE):
        if (Path(source) / name).exists():
            shutil.copyfile(Path(source) / name, Path(dest) / name)
