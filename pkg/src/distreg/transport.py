"""Channels that move exchanges between the analysis center and partners.

Three implementations share one contract:

* ``FileCoordinatorChannel`` / ``FileWorkerChannel`` run the trigger and
  manifest protocol over directories; with partner paths configured they
  also play the transfer agent over a shared filesystem.
* ``MemoryHub`` passes the same encoded bytes through in-process queues.
* ``LoopThroughChannel`` is the single-process test mode: partners are
  run one after another between the coordinator's broadcast and gather.

Payloads are always bytes, so every transport feeds the coordinator
identical input.
"""

from __future__ import annotations

import logging
import queue
import time
from pathlib import Path
from typing import Callable, Mapping, Protocol as TypingProtocol

from . import protocol as proto
from .errors import DistRegError, ExchangeTimeout, PartnerFailure, ProtocolError
from .protocol import RequestLayout
from .tables import write_bytes

log = logging.getLogger(__name__)

Payload = dict[str, bytes]


class CoordinatorChannel(TypingProtocol):
    def broadcast(self, files: Mapping[str, bytes], tag: str) -> None: ...
    def gather(self, tag: str) -> dict[int, Payload]: ...
    def finish(self, success: bool) -> None: ...


class WorkerChannel(TypingProtocol):
    def receive(self, tag: str) -> Payload: ...
    def send(self, files: Mapping[str, bytes]) -> None: ...
    def finish(self, success: bool, note: str | None = None) -> None: ...


def _wait_until_drained(directory: Path, wait_min: float, wait_max: float, deadline: float) -> None:
    trigger = Path(directory) / proto.TRIGGER
    for interval in proto.poll_intervals(wait_min, wait_max):
        if not trigger.exists():
            return
        now = time.monotonic()
        if now >= deadline:
            raise ExchangeTimeout(f"transfer agent never picked up {trigger}")
        time.sleep(min(interval, deadline - now))


def _failure_note(directory: Path) -> str:
    path = Path(directory) / proto.FAILURE_NOTE
    return path.read_text(encoding="utf-8").strip() if path.exists() else ""


class FileCoordinatorChannel:
    def __init__(
        self,
        layout: RequestLayout,
        partners,
        wait_min: float = 3.0,
        wait_max: float = 7200.0,
        run_deadline: float = 4 * 3600.0,
        partner_inputfiles: Mapping[int, Path] | None = None,
    ):
        self.layout = layout
        self.partners = tuple(sorted(partners))
        self.wait_min = wait_min
        self.wait_max = wait_max
        self.deadline = time.monotonic() + run_deadline
        self.partner_inputfiles = dict(partner_inputfiles or {})

    def broadcast(self, files, tag):
        out = self.layout.inputfiles
        if not self.partner_inputfiles:
            _wait_until_drained(out, self.wait_min, self.wait_max, self.deadline)
        proto.write_exchange(out, files)
        if self.partner_inputfiles:
            proto.relay_exchange(out, [self.partner_inputfiles[k] for k in self.partners])

    def gather(self, tag):
        pending = list(self.partners)
        got: dict[int, Payload] = {}
        for interval in proto.poll_intervals(self.wait_min, self.wait_max):
            for k in list(pending):
                d = self.layout.partner_msoc(k)
                if proto.terminal_state(d) == "failure":
                    raise PartnerFailure(k, _failure_note(d))
                if (d / proto.TRIGGER).exists():
                    names = proto.watch_for_trigger(d, self.wait_min, self.wait_max, self.deadline)
                    got[k] = proto.drain(d, names, tag)
                    pending.remove(k)
            if not pending:
                return {k: got[k] for k in self.partners}
            now = time.monotonic()
            if now >= self.deadline:
                raise ExchangeTimeout(f"timed out waiting for partners {pending}")
            time.sleep(min(interval, self.deadline - now))
        raise AssertionError("unreachable")

    def finish(self, success):
        proto.signal_terminal(self.layout.inputfiles, success)
        for k in self.partners:
            if k in self.partner_inputfiles:
                proto.relay_terminal(self.layout.inputfiles, self.partner_inputfiles[k])


class FileWorkerChannel:
    def __init__(
        self,
        layout: RequestLayout,
        dp_cd: int,
        wait_min: float = 3.0,
        wait_max: float = 7200.0,
        run_deadline: float = 4 * 3600.0,
        central_request_dir: Path | None = None,
    ):
        self.layout = layout
        self.dp_cd = dp_cd
        self.wait_min = wait_min
        self.wait_max = wait_max
        self.deadline = time.monotonic() + run_deadline
        self.central_msoc = (
            Path(central_request_dir) / f"msoc{dp_cd}" if central_request_dir else None
        )

    def _coordinator_failed(self):
        if (self.layout.inputfiles / proto.JOB_FAIL).exists():
            raise ProtocolError("analysis center signalled job_fail.ok")

    def receive(self, tag):
        names = proto.watch_for_trigger(
            self.layout.inputfiles, self.wait_min, self.wait_max, self.deadline,
            also=self._coordinator_failed,
        )
        return proto.drain(self.layout.inputfiles, names, tag)

    def send(self, files):
        out = self.layout.msoc
        if self.central_msoc is None:
            _wait_until_drained(out, self.wait_min, self.wait_max, self.deadline)
        proto.write_exchange(out, files)
        if self.central_msoc is not None:
            proto.relay_exchange(out, [self.central_msoc])

    def finish(self, success, note=None):
        if note:
            write_bytes(self.layout.msoc / proto.FAILURE_NOTE, note.encode("utf-8"))
        proto.signal_terminal(self.layout.msoc, success)
        if self.central_msoc is not None:
            proto.relay_terminal(self.layout.msoc, self.central_msoc)


class MemoryHub:
    """In-process transport; records every partner-to-center payload."""

    def __init__(self, partners, timeout: float = 4 * 3600.0):
        self.partners = tuple(sorted(partners))
        self.timeout = timeout
        self.to_worker = {k: queue.Queue() for k in self.partners}
        self.to_center: queue.Queue = queue.Queue()
        self.transcript: list[tuple[int, str, str, bytes]] = []
        self.terminal: dict[object, bool] = {}

    def coordinator(self) -> "MemoryCoordinatorChannel":
        return MemoryCoordinatorChannel(self)

    def worker(self, dp_cd: int) -> "MemoryWorkerChannel":
        return MemoryWorkerChannel(self, dp_cd)


class MemoryCoordinatorChannel:
    def __init__(self, hub: MemoryHub):
        self.hub = hub
        self._early: dict[int, tuple] = {}

    def broadcast(self, files, tag):
        for k in self.hub.partners:
            self.hub.to_worker[k].put(("exchange", dict(files)))

    def gather(self, tag):
        got: dict[int, Payload] = {}
        while len(got) < len(self.hub.partners):
            try:
                kind, k, body = self.hub.to_center.get(timeout=self.hub.timeout)
            except queue.Empty:
                missing = [k for k in self.hub.partners if k not in got]
                raise ExchangeTimeout(f"timed out waiting for partners {missing}") from None
            if kind == "fail":
                raise PartnerFailure(k, body or "")
            if kind == "exchange":
                for name, data in body.items():
                    self.hub.transcript.append((k, tag, name, data))
                got[k] = body
        return {k: got[k] for k in self.hub.partners}

    def finish(self, success):
        self.hub.terminal["center"] = success
        if not success:
            for k in self.hub.partners:
                self.hub.to_worker[k].put(("abort", None))


class MemoryWorkerChannel:
    def __init__(self, hub: MemoryHub, dp_cd: int):
        self.hub = hub
        self.dp_cd = dp_cd

    def receive(self, tag):
        try:
            kind, files = self.hub.to_worker[self.dp_cd].get(timeout=self.hub.timeout)
        except queue.Empty:
            raise ExchangeTimeout(f"partner {self.dp_cd} timed out waiting for the center") from None
        if kind == "abort":
            raise ProtocolError("analysis center signalled job_fail.ok")
        return files

    def send(self, files):
        self.hub.to_center.put(("exchange", self.dp_cd, dict(files)))

    def finish(self, success, note=None):
        self.hub.terminal[self.dp_cd] = success
        if not success:
            self.hub.to_center.put(("fail", self.dp_cd, note))


class LoopThroughChannel:
    """Test mode: run each partner in turn inside ``gather``.

    Partners read the center's ``inputfiles`` directly and write into
    ``msoc<dp_cd>``, exactly where the center looks for them.
    """

    def __init__(self, layout: RequestLayout, workers: Mapping[int, object]):
        self.layout = layout
        self.workers = dict(workers)
        self.partners = tuple(sorted(self.workers))

    def broadcast(self, files, tag):
        proto.write_exchange(self.layout.inputfiles, files)

    def gather(self, tag):
        inbox = self.layout.inputfiles
        if not (inbox / proto.TRIGGER).exists():
            raise ProtocolError("no broadcast to loop through")
        names = proto.read_manifest(inbox)
        files = {n: (inbox / n).read_bytes() for n in names}
        try:
            for k in self.partners:
                out = self.layout.partner_msoc(k)
                try:
                    payload, final = self.workers[k].handle(files)
                except DistRegError as exc:
                    write_bytes(out / proto.FAILURE_NOTE, str(exc).encode("utf-8"))
                    proto.signal_terminal(out, False)
                    raise PartnerFailure(k, str(exc)) from exc
                proto.write_exchange(out, payload)
                if final:
                    proto.signal_terminal(out, True)
        finally:
            (inbox / proto.TRIGGER).unlink(missing_ok=True)
        return {
            k: proto.drain(self.layout.partner_msoc(k), proto.watch_for_trigger(
                self.layout.partner_msoc(k), 0.01, 0.01, time.monotonic()), tag)
            for k in self.partners
        }

    def finish(self, success):
        proto.signal_terminal(self.layout.inputfiles, success)
