"""Single-process runs: the test-mode loop and an in-memory federation."""

from __future__ import annotations

import threading
from pathlib import Path

from .config import ModelSpec
from .coordinator import FitOutputs, run_coordinator
from .protocol import RequestLayout
from .transport import LoopThroughChannel, MemoryHub
from .worker import Worker, run_worker


def run_local(spec: ModelSpec, data_in_dir: str | Path, root: str | Path, request_id: str = "request_1",
              min_counts: dict[int, int] | None = None, beta0=None) -> tuple[FitOutputs, RequestLayout]:
    """Test mode: partner datasets are ``<reg_ds_in>_<dp_cd>.csv`` in one directory.

    The coordinator writes ``inputfiles``, each partner in turn answers
    into ``msoc<dp_cd>``, and the outputs land in ``msoc``.
    """
    spec = spec.with_overrides(test_env_cd=1)
    layout = RequestLayout(Path(root), request_id, tuple(sorted(spec.dp_cd_list))).create()
    min_counts = min_counts or {}
    workers = {k: Worker(k, Path(data_in_dir), layout.dplocal, min_counts.get(k)) for k in layout.partners}
    out = run_coordinator(spec, LoopThroughChannel(layout, workers), layout.msoc, beta0)
    return out, layout


def run_memory(spec: ModelSpec, data_in_dir: str | Path, out_dir: str | Path | None = None,
               min_counts: dict[int, int] | None = None, beta0=None,
               timeout: float = 600.0) -> tuple[FitOutputs, MemoryHub]:
    """Partners as threads talking through in-memory queues.

    Returns the outputs and the hub, whose ``transcript`` records every
    byte a partner sent.
    """
    spec = spec.with_overrides(test_env_cd=1)
    partners = tuple(sorted(spec.dp_cd_list))
    hub = MemoryHub(partners, timeout)
    min_counts = min_counts or {}
    codes: dict[int, int] = {}

    def serve(k: int) -> None:
        codes[k] = run_worker(Worker(k, Path(data_in_dir), None, min_counts.get(k)), hub.worker(k))

    threads = [threading.Thread(target=serve, args=(k,), daemon=True) for k in partners]
    for t in threads:
        t.start()
    try:
        out = run_coordinator(spec, hub.coordinator(), out_dir, beta0)
    finally:
        for t in threads:
            t.join(timeout)
    return out, hub
