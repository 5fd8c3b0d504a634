"""Command-line entry points.

Exit codes: 0 success, 2 non-convergence, 3 protocol failure,
4 configuration or data error, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import _SPEC_KEYS, ModelSpec, WorkerConfig, load_json
from .coordinator import emit_outputs, load_initial_estimates, run_coordinator
from .datasets import resolve
from .errors import ConfigurationError, DistRegError
from .local import run_local
from .model_core import read_dataset
from .oracle import pooled_fit
from .partition import partition_csv
from .protocol import RequestLayout
from .report import render_report
from .transport import FileCoordinatorChannel, FileWorkerChannel
from .worker import Worker, run_worker

log = logging.getLogger("distreg")

_WORKER_KEYS = ("dp_cd", "data_in_dir", "root", "request_id", "min_count_per_grp",
                "central_request_dir", "wait_time_min", "wait_time_max", "run_deadline")


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration keyed by the wrapper parameter names")
    g = p.add_argument_group("run parameters (override the config file)")
    for key in _SPEC_KEYS:
        g.add_argument(f"--{key}", dest=f"spec_{key}", metavar="VALUE")


def _spec_from_args(args) -> tuple[ModelSpec, Path | None]:
    raw = {}
    base = None
    if args.config:
        raw.update(load_json(args.config))
        base = Path(args.config).resolve().parent
    for key in _SPEC_KEYS:
        value = getattr(args, f"spec_{key}")
        if value is not None:
            raw[key] = value
    return ModelSpec.from_mapping(raw), base


def _partner_dirs(items) -> dict[int, Path]:
    out = {}
    for item in items or ():
        try:
            k, path = item.split("=", 1)
            out[int(k)] = Path(path)
        except ValueError:
            raise ConfigurationError(f"--partner-dir expects K=PATH, got {item!r}") from None
    return out


def cmd_coordinator(args) -> int:
    spec, base = _spec_from_args(args)
    layout = RequestLayout(Path(args.root), args.request_id, tuple(sorted(spec.dp_cd_list))).create()
    partner_dirs = _partner_dirs(args.partner_dir)
    if partner_dirs and set(partner_dirs) != set(spec.dp_cd_list):
        raise ConfigurationError("--partner-dir must be given for every partner or for none")
    channel = FileCoordinatorChannel(
        layout, spec.dp_cd_list, spec.wait_time_min, spec.wait_time_max, spec.run_deadline,
        {k: Path(p) / "inputfiles" for k, p in partner_dirs.items()},
    )
    beta0 = load_initial_estimates(spec, base)
    out = run_coordinator(spec, channel, layout.msoc, beta0)
    print(f"converged after {out.iterations} iteration(s); outputs in {layout.msoc}")
    return 0


def cmd_worker(args) -> int:
    raw = load_json(args.config) if args.config else {}
    for key in _WORKER_KEYS:
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    cfg = WorkerConfig.from_mapping(raw)
    layout = RequestLayout(cfg.root, cfg.request_id).create()
    channel = FileWorkerChannel(layout, cfg.dp_cd, cfg.wait_time_min, cfg.wait_time_max,
                                cfg.run_deadline, cfg.central_request_dir)
    return run_worker(Worker.from_config(cfg, layout.dplocal), channel)


def cmd_local(args) -> int:
    spec, base = _spec_from_args(args)
    min_counts = {}
    for item in args.min_count or ():
        k, v = item.split("=", 1)
        min_counts[int(k)] = int(v)
    out, layout = run_local(spec, Path(args.data_in), Path(args.root), args.request_id, min_counts,
                            load_initial_estimates(spec, base))
    print(f"converged after {out.iterations} iteration(s); outputs in {layout.msoc}")
    return 0


def cmd_partition(args) -> int:
    if (args.sizes is None) == (args.k is None):
        raise ConfigurationError("give exactly one of --sizes or --k")
    paths = partition_csv(resolve(args.input), Path(args.out), args.name, sizes=args.sizes, k=args.k,
                          seed=args.seed, shuffle=not args.contiguous, dummies=args.dummies,
                          pooled=not args.no_pooled)
    for p in paths:
        print(p)
    return 0


def cmd_oracle(args) -> int:
    spec, base = _spec_from_args(args)
    needed = list(spec.independent_vars) + [spec.dependent_var] + [v for v in (spec.freq, spec.weight) if v]
    data = read_dataset(resolve(args.data), 0, needed)
    out, _ = pooled_fit(data, spec, load_initial_estimates(spec, base))
    paths = emit_outputs(out, Path(args.out), args.prefix or f"{spec.run_id}_oracle")
    print(f"pooled fit converged after {out.iterations} iteration(s); {len(paths)} tables in {args.out}")
    return 0


def cmd_report(args) -> int:
    paths = render_report(Path(args.dir), args.prefix, args.out, figures=not args.no_figures)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distreg", description="Distributed linear and logistic regression")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coordinator", help="run the analysis center over a request directory")
    _add_spec_flags(p)
    p.add_argument("--root", required=True, help="directory holding <request-id>/")
    p.add_argument("--request-id", default="request_1")
    p.add_argument("--partner-dir", action="append", metavar="K=PATH",
                   help="partner request directory on a shared filesystem; relays exchanges directly")
    p.set_defaults(func=cmd_coordinator)

    p = sub.add_parser("worker", help="run one data partner")
    p.add_argument("--config", help="JSON worker configuration")
    p.add_argument("--dp_cd", type=int)
    p.add_argument("--data_in_dir")
    p.add_argument("--root")
    p.add_argument("--request_id")
    p.add_argument("--min_count_per_grp", type=int)
    p.add_argument("--central_request_dir")
    p.add_argument("--wait_time_min", type=float)
    p.add_argument("--wait_time_max", type=float)
    p.add_argument("--run_deadline", type=float)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("local", help="test mode: coordinator and partners in one process")
    _add_spec_flags(p)
    p.add_argument("--data-in", required=True, help="directory with <reg_ds_in>_<dp_cd>.csv files")
    p.add_argument("--root", required=True)
    p.add_argument("--request-id", default="request_1")
    p.add_argument("--min-count", action="append", metavar="K=N", help="partner-specific min_count_per_grp")
    p.set_defaults(func=cmd_local)

    p = sub.add_parser("partition", help="split a pooled CSV into partner datasets")
    p.add_argument("--input", required=True, help="CSV path or a built-in name (boston)")
    p.add_argument("--out", required=True)
    p.add_argument("--name", required=True, help="file stem; parts are <name>_<k>.csv")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contiguous", action="store_true", help="split in file order without shuffling")
    p.add_argument("--dummies", action="store_true", help="append dummy_dp_var2..K site indicators")
    p.add_argument("--no-pooled", action="store_true", help="do not write the pooled <name>.csv")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("oracle", help="pooled individual-level reference fit")
    _add_spec_flags(p)
    p.add_argument("--data", required=True, help="pooled CSV path or a built-in name")
    p.add_argument("--out", required=True)
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="render a text report, plot CSVs and figures")
    p.add_argument("--dir", required=True, help="directory with the <prefix>_*.csv outputs")
    p.add_argument("--prefix", required=True)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DistRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
