"""Command-line interface: ``rmstperm test``, ``rmstperm km`` and ``rmstperm sim``.

Exit codes: 0 success, 2 usage or invalid argument, 3 unreadable dataset,
4 window not estimable, 5 degenerate variance, 6 bad simulation config.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .datafile import ReportDocument, read_dataset
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateError,
    EstimabilityError,
    InvalidInputError,
    RmstError,
)
from .inference import METHODS, ESTIMANDS, TestConfig, run_tests
from .rmst import estimate_rmst
from .simulation import format_summary, load_config, run_study, write_json, write_tsv
from .survival import censoring_km, counting_processes, event_table, kaplan_meier

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_ESTIMABILITY = 4
EXIT_DEGENERATE = 5
EXIT_CONFIG = 6

SEED_ENV = "RMST_SEED"


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmstperm", description="Two-sample RMST tests with permutation inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="compare the RMST of two groups in a CSV file")
    p.add_argument("dataset", help="CSV file with header time,status,group")
    p.add_argument("--tau", type=_positive_float, required=True, help="end of the restriction window")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--method", choices=METHODS + ("all",), default="studentized-perm")
    p.add_argument("--estimand", choices=ESTIMANDS + ("both",), default="difference")
    p.add_argument("--B", dest="n_perm", type=_positive_int, default=2000, help="permutation replicates")
    p.add_argument("--seed", type=_seed, default=None, help=f"permutation seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", help="also write the report as JSON to this path")
    p.add_argument("--round", dest="decimals", type=int, default=None, help="round times to this many decimals")

    p = sub.add_parser("km", help="print Kaplan-Meier, censoring and counting-process step points")
    p.add_argument("dataset")
    p.add_argument("--tau", type=_positive_float, default=None, help="only list times up to tau")
    p.add_argument("--out", help="write the TSV here instead of stdout")
    p.add_argument("--round", dest="decimals", type=int, default=None, help="round times to this many decimals")

    p = sub.add_parser("sim", help="run a Monte Carlo grid described by a JSON config")
    p.add_argument("config")
    p.add_argument("--out", help="output prefix; writes PREFIX.tsv and PREFIX.json")
    p.add_argument("--workers", type=_positive_int, default=None, help="worker processes (overrides the config)")
    return parser


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return _seed(raw.strip())
    except (ValueError, argparse.ArgumentTypeError):
        raise InvalidInputError(f"{SEED_ENV}={raw!r} is not an unsigned 64-bit integer") from None


def cmd_test(args) -> ReportDocument:
    dataset = read_dataset(args.dataset, args.decimals)
    seed = _resolve_seed(args.seed)
    methods = METHODS if args.method == "all" else (args.method,)
    estimands = ESTIMANDS if args.estimand == "both" else (args.estimand,)
    config = TestConfig(alpha=args.alpha, n_perm=args.n_perm, seed=seed, workers=args.workers)
    results = run_tests(dataset.sample1, dataset.sample2, args.tau, config, methods, estimands)
    n = len(dataset.sample1) + len(dataset.sample2)
    estimates = [estimate_rmst(s, args.tau, n) for s in (dataset.sample1, dataset.sample2)]
    report = ReportDocument.build(
        dataset, estimates, results, version=__version__, tau=args.tau, alpha=args.alpha, n_perm=args.n_perm, seed=seed
    )
    sys.stdout.write(report.format_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return report


def km_rows(sample, tau: Optional[float] = None) -> list[tuple]:
    """Step points ``(t, S(t), G(t), Y(t), N(t))`` starting at ``t = 0``."""
    km = kaplan_meier(sample)
    cens = censoring_km(sample)
    n_proc, y_proc = counting_processes(sample)
    times = event_table(sample).times
    grid = np.unique(np.concatenate(([0.0], times)))
    if tau is not None:
        grid = grid[grid <= tau]
    return [(float(t), km(t), cens(t), y_proc(t), n_proc(t)) for t in grid]


def cmd_km(args) -> None:
    dataset = read_dataset(args.dataset, args.decimals)
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(("group", "t", "S", "G", "Y", "N"))
        for sample, label in zip((dataset.sample1, dataset.sample2), dataset.labels):
            for t, s, g, y, n in km_rows(sample, args.tau):
                writer.writerow((label, repr(t), repr(s), repr(g), int(y), int(n)))
    finally:
        if args.out:
            fh.close()


def cmd_sim(args) -> None:
    config = load_config(args.config, workers=args.workers)
    result = run_study(config)
    if args.out:
        with open(f"{args.out}.tsv", "w", encoding="utf-8", newline="") as fh:
            write_tsv(result, fh)
        with open(f"{args.out}.json", "w", encoding="utf-8") as fh:
            write_json(result, fh, __version__)
    sys.stdout.write(format_summary(result))
    sys.stderr.write(f"{len(config.cells)} cell(s) in {result.wall_clock:.1f} s\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"test": cmd_test, "km": cmd_km, "sim": cmd_sim}
    codes = [
        (DataFormatError, EXIT_PARSE),
        (EstimabilityError, EXIT_ESTIMABILITY),
        (DegenerateError, EXIT_DEGENERATE),
        (ConfigError, EXIT_CONFIG),
        (RmstError, EXIT_USAGE),
    ]
    try:
        handlers[args.command](args)
    except RmstError as exc:
        code = next(c for kind, c in codes if isinstance(exc, kind))
        sys.stderr.write(f"rmstperm {args.command}: error: {exc}\n")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
