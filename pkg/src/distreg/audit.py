"""Privacy audit of what partners actually sent to the analysis center.

Every partner-to-center file must be one of the known aggregate kinds:
an SSCP matrix, a table of named scalar sums, or a bin summary whose
bins all hold at least the partner's minimum cell count.  Anything
else, including unknown file names, counts as a violation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DistRegError
from .fit_stats import SiteStatContribution
from .protocol import ARCHIVE, MANIFEST, RequestLayout
from .solver import SscpMatrix
from .summaries import bins_from_csv
from .tables import decode_csv
from .worker import (
    FINAL_STATS_FILE,
    PCT2_FILE,
    PCT_FILE,
    ROBUST_SSCP_FILE,
    SITE_STATS_FILE,
    SSCP_FILE,
)

SSCP_KINDS = {SSCP_FILE, ROBUST_SSCP_FILE}
SCALAR_KINDS = {SITE_STATS_FILE, FINAL_STATS_FILE}
BIN_KINDS = {PCT_FILE, PCT2_FILE}
_STAT_NAMES = {f.name for f in fields(SiteStatContribution)}


@dataclass(frozen=True)
class Violation:
    dp_cd: int
    tag: str
    name: str
    reason: str


@dataclass
class AuditSummary:
    files: int
    sscp_files: int
    scalar_files: int
    bin_files: int
    bins: int
    smallest_bin: float
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_transcript(entries: Iterable[tuple[int, str, str, bytes]],
                     min_count: int | Mapping[int, int]) -> AuditSummary:
    """Check ``(dp_cd, tag, file name, bytes)`` records against the rules."""
    out = AuditSummary(0, 0, 0, 0, 0, float("inf"), [])
    for dp_cd, tag, name, data in entries:
        floor = min_count[dp_cd] if isinstance(min_count, Mapping) else min_count
        out.files += 1

        def bad(reason: str) -> None:
            out.violations.append(Violation(dp_cd, tag, name, reason))

        try:
            if name in SSCP_KINDS:
                SscpMatrix.from_csv(data)
                out.sscp_files += 1
            elif name in SCALAR_KINDS:
                header, rows = decode_csv(data)
                if header != ["statistic", "value"] or any(
                        len(r) != 2 or r[0] not in _STAT_NAMES for r in rows):
                    bad("scalar table holds unexpected rows")
                out.scalar_files += 1
            elif name in BIN_KINDS:
                bins = bins_from_csv(data)
                out.bin_files += 1
                for b in bins:
                    out.bins += 1
                    out.smallest_bin = min(out.smallest_bin, b.n_obs)
                    if b.partner_id != dp_cd:
                        bad(f"bin {b.bin} is labelled with partner {b.partner_id}")
                    if b.n_obs < floor:
                        bad(f"bin {b.bin} holds {b.n_obs} records, below the floor of {floor}")
                    if b.distinct_prob_count > b.n_obs:
                        bad(f"bin {b.bin} reports more distinct values than records")
            else:
                bad("unrecognised file kind")
        except (DistRegError, ValueError, IndexError) as exc:
            bad(f"unparseable: {exc}")
    return out


def transcript_from_layout(layout: RequestLayout) -> list[tuple[int, str, str, bytes]]:
    """Collect the archived partner payloads under ``msoc<dp_cd>/_consumed``."""
    entries = []
    for k in layout.partners:
        archive = layout.partner_msoc(k) / ARCHIVE
        if not archive.is_dir():
            continue
        for tag_dir in sorted(p for p in archive.iterdir() if p.is_dir()):
            for f in sorted(tag_dir.iterdir()):
                if f.name != MANIFEST:
                    entries.append((k, tag_dir.name, f.name, f.read_bytes()))
    return entries
