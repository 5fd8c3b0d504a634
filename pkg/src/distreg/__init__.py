"""Distributed linear and logistic regression over summary-level exchanges.

Partners keep their records and publish only weighted SSCP matrices,
scalar sums and privacy-binned residual summaries; the analysis center
combines them into estimates identical to a pooled fit.
"""

from __future__ import annotations

from .config import ModelSpec, WorkerConfig
from .coordinator import FitOutputs, emit_outputs, run_coordinator
from .errors import DistRegError
from .local import run_local, run_memory
from .oracle import pooled_fit
from .worker import Worker, run_worker

__all__ = [
    "ModelSpec", "WorkerConfig", "FitOutputs", "run_coordinator", "emit_outputs", "run_local",
    "run_memory", "pooled_fit", "Worker", "run_worker", "DistRegError",
]
__version__ = "0.1.0"
