from __future__ import annotations

import threading
import time

import pytest

from distreg import protocol as proto
from distreg.errors import ExchangeTimeout, ProtocolError


def test_layout_create_and_validate(tmp_path):
    lay = proto.RequestLayout(tmp_path, "request_1", (1, 2))
    with pytest.raises(ProtocolError):
        lay.validate()
    lay.create().validate()
    names = sorted(p.name for p in lay.base.iterdir())
    assert names == ["dplocal", "inputfiles", "msoc", "msoc1", "msoc2"]


def test_write_exchange_contract(tmp_path):
    proto.write_exchange(tmp_path, {"a.csv": b"1\n", "b.csv": b"2\n"})
    assert (tmp_path / "file_list.csv").read_bytes() == b"a.csv\nb.csv\n"
    assert (tmp_path / "files_done.ok").read_bytes() == b""
    assert (tmp_path / "files_done.ok").stat().st_mtime_ns >= (tmp_path / "file_list.csv").stat().st_mtime_ns


def test_empty_payload_still_triggers(tmp_path):
    proto.write_exchange(tmp_path, {})
    assert (tmp_path / "file_list.csv").read_bytes() == b""
    assert proto.watch_for_trigger(tmp_path, 0.01, 0.01) == []


def test_stale_trigger_rejected(tmp_path):
    proto.write_exchange(tmp_path, {"a.csv": b""})
    with pytest.raises(ProtocolError, match="stale"):
        proto.write_exchange(tmp_path, {"a.csv": b""})


def test_illegal_names(tmp_path):
    with pytest.raises(ProtocolError):
        proto.write_exchange(tmp_path, {"../x.csv": b""})


def test_watch_returns_immediately_and_drains(tmp_path):
    proto.write_exchange(tmp_path, {"a.csv": b"x"})
    t0 = time.monotonic()
    files = proto.consume_exchange(tmp_path, "iter000", wait_min=5, wait_max=5)
    assert time.monotonic() - t0 < 1.0
    assert files == {"a.csv": b"x"}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["_consumed"]
    assert (tmp_path / "_consumed" / "iter000" / "a.csv").read_bytes() == b"x"


def test_watch_picks_up_delayed_trigger(tmp_path):
    def late():
        time.sleep(0.3)
        proto.write_exchange(tmp_path, {"a.csv": b"x"})

    th = threading.Thread(target=late)
    t0 = time.monotonic()
    th.start()
    names = proto.watch_for_trigger(tmp_path, 0.05, 0.1, time.monotonic() + 10)
    th.join()
    assert names == ["a.csv"]
    assert time.monotonic() - t0 < 0.3 + 0.1 + 0.2


def test_watch_timeout(tmp_path):
    with pytest.raises(ExchangeTimeout):
        proto.watch_for_trigger(tmp_path, 0.01, 0.02, time.monotonic() + 0.1)


def test_ghost_manifest_entry(tmp_path):
    (tmp_path / "file_list.csv").write_bytes(b"ghost.csv\n")
    (tmp_path / "files_done.ok").write_bytes(b"")
    with pytest.raises(ProtocolError, match="ghost.csv"):
        proto.watch_for_trigger(tmp_path, 0.01, 0.01)


def test_poll_intervals_double_up_to_cap():
    it = proto.poll_intervals(3, 20)
    assert [next(it) for _ in range(5)] == [3, 6, 12, 20, 20]


class TestParams:
    def _base(self):
        p = proto.ParamSet()
        p["reg_ds_in"] = "boston"
        p["independent_vars"] = "crim indus dis dummy_dp_var2 dummy_dp_var3"
        p["dependent_vars"] = "medv"
        p["regr_type_cd"] = "2"
        p["iter_nb"] = "0"
        p["last_iter_in"] = "0"
        p["end_job_dp_in"] = "0"
        return p

    def test_round_trip(self):
        p = self._base()
        data = proto.encode_params(p)
        assert data.startswith(b"M_var_nm,M_var_value\n")
        back = proto.decode_params(data)
        assert back == p and list(back) == list(p)
        assert back["independent_vars"] == "crim indus dis dummy_dp_var2 dummy_dp_var3"

    def test_empty_set_fails_required_keys(self):
        with pytest.raises(ProtocolError, match="required"):
            proto.decode_params(proto.encode_params({}))

    def test_duplicate(self):
        data = proto.encode_params(self._base()) + b"iter_nb,1\n"
        with pytest.raises(ProtocolError, match="duplicate"):
            proto.decode_params(data)

    @pytest.mark.parametrize("key, value", [("last_iter_in", "yes"), ("regr_type_cd", "10")])
    def test_bad_values(self, key, value):
        p = self._base()
        p[key] = value
        with pytest.raises(ProtocolError):
            proto.decode_params(proto.encode_params(p))

    def test_bad_header(self):
        with pytest.raises(ProtocolError):
            proto.decode_params(b"name,value\nreg_ds_in,x\n")


class TestTerminal:
    def test_success(self, tmp_path):
        proto.signal_terminal(tmp_path, True)
        assert proto.terminal_state(tmp_path) == "success"
        assert not (tmp_path / "job_fail.ok").exists()

    def test_failure_dominates(self, tmp_path):
        proto.signal_terminal(tmp_path, True)
        proto.signal_terminal(tmp_path, False)
        assert proto.terminal_state(tmp_path) == "failure"

    def test_none(self, tmp_path):
        assert proto.terminal_state(tmp_path) is None


def test_relay_copies_and_consumes_source_trigger(tmp_path):
    src, d1, d2 = (tmp_path / n for n in ("src", "d1", "d2"))
    for d in (src, d1, d2):
        d.mkdir()
    proto.write_exchange(src, {"a.csv": b"abc"})
    proto.relay_exchange(src, [d1, d2])
    assert not (src / "files_done.ok").exists()
    for d in (d1, d2):
        assert proto.consume_exchange(d, "t", wait_min=0.01, wait_max=0.01) == {"a.csv": b"abc"}


def test_reader_never_sees_partial_payload(tmp_path):
    """A writer with random delays between files; the reader checks completeness."""
    import random

    rng = random.Random(3)
    payloads = [{f"f{j}.csv": bytes([65 + i]) * (1000 * (j + 1)) for j in range(3)} for i in range(15)]
    errors = []

    def writer():
        for files in payloads:
            while (tmp_path / "files_done.ok").exists():
                time.sleep(0.001)
            for name, data in files.items():
                proto.write_bytes(tmp_path / name, data)
                time.sleep(rng.uniform(0, 0.005))
            proto.write_bytes(tmp_path / "file_list.csv", "".join(f"{n}\n" for n in files).encode())
            time.sleep(rng.uniform(0, 0.005))
            proto._touch(tmp_path / "files_done.ok")

    th = threading.Thread(target=writer)
    th.start()
    for i, files in enumerate(payloads):
        got = proto.consume_exchange(tmp_path, f"x{i}", wait_min=0.001, wait_max=0.005,
                                     deadline=time.monotonic() + 10)
        if got != files:
            errors.append(i)
    th.join()
    assert errors == []
