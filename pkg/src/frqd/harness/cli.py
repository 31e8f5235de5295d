"""Command-line entry point.

Exit codes: 0 success, 1 predicate false (``verify``/``robust``), 2 usage or
configuration error, 3 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..graph import (CapabilityError, construct_redundant, format_edge_list, is_r_robust_bruteforce,
                     is_rr_redundant, load_edge_list)
from .config import ConfigError, load_config
from .experiment import RunFailure, run_experiment
from .report import (IncomparableReports, compare_reports, format_table, load_report, report_json,
                     table_csv, write_artifacts)

LOG_ENV = "FRQD_LOG_LEVEL"

EXIT_OK, EXIT_FALSE, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2, 3

log = logging.getLogger("frqd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _usage(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _read_graph(path: str):
    try:
        return load_edge_list(path)
    except FileNotFoundError:
        raise ConfigError(f"no such file: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_construct(args) -> int:
    try:
        g = construct_redundant(args.n, args.r)
    except ValueError as exc:
        return _usage(str(exc))
    text = format_edge_list(g, comment=f"construct n={args.n} r={args.r}")
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        log.info("wrote %d edges to %s", g.num_edges, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.r <= args.r_prime or args.r_prime < 0:
        return _usage(f"need r > r' >= 0, got r={args.r}, r'={args.r_prime}")
    g = _read_graph(args.graph)
    result = is_rr_redundant(g, args.r, args.r_prime)
    if args.json:
        print(json.dumps(result.to_dict(), sort_keys=True))
    else:
        print(result.describe())
    return EXIT_OK if result else EXIT_FALSE


def cmd_robust(args) -> int:
    if args.r < 1:
        return _usage("r must be at least 1")
    g = _read_graph(args.graph)
    try:
        ok = is_r_robust_bruteforce(g, args.r)
    except CapabilityError as exc:
        return _usage(str(exc))
    print(f"{args.r}-robust: {'yes' if ok else 'no'}")
    return EXIT_OK if ok else EXIT_FALSE


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.out:
        cfg = cfg.model_copy(update={"outputs": cfg.outputs.model_copy(update={"dir": args.out})})
    try:
        result = run_experiment(cfg)
    except RunFailure as failure:
        out = Path(cfg.outputs.dir)
        out.mkdir(parents=True, exist_ok=True)
        failure.report["failure"] = {"invariant": failure.violation.name,
                                     "detail": failure.violation.detail}
        (out / "failure.json").write_text(report_json(failure.report))
        print(f"invariant violated: {failure.violation}", file=sys.stderr)
        print(f"partial report written to {out / 'failure.json'}", file=sys.stderr)
        return EXIT_VIOLATION
    written = write_artifacts(result)
    rep = result.report
    print(f"{rep['algorithm']}: {rep['steps']} steps, max error {rep['final']['max_error']:.4g} "
          f"(relative {rep['final']['relative_error']:.4g}), "
          f"all agents optimal: {'yes' if rep['all_agents_optimal'] else 'no'}")
    for kind, path in written.items():
        print(f"  {kind}: {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        reports = [load_report(p) for p in args.reports]
    except (OSError, ValueError) as exc:
        return _usage(str(exc))
    try:
        rows = compare_reports(reports)
    except IncomparableReports as exc:
        return _usage(str(exc))
    sys.stdout.write(format_table(rows))
    if args.csv:
        Path(args.csv).write_text(table_csv(rows))
    return EXIT_OK


def cmd_show_config(args) -> int:
    sys.stdout.write(load_config(args.config, args.set).to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frqd", description="Resilient distributed Q-learning experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("construct", help="write a redundant graph as an edge list")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--r", type=int, required=True)
    c.add_argument("--out", help="output path (stdout when omitted)")
    c.set_defaults(func=cmd_construct)

    v = sub.add_parser("verify", help="check (r, r')-redundancy of an edge list")
    v.add_argument("graph")
    v.add_argument("--r", type=int, required=True)
    v.add_argument("--r-prime", type=int, required=True)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("robust", help="exhaustive r-robustness check (small graphs only)")
    b.add_argument("graph")
    b.add_argument("--r", type=int, required=True)
    b.set_defaults(func=cmd_robust)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config", nargs="?", help="JSON or TOML config; defaults when omitted")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field by dotted path (repeatable)")
    r.add_argument("--out", help="output directory (overrides outputs.dir)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("compare", help="per-state policy table across run reports")
    m.add_argument("reports", nargs="+")
    m.add_argument("--csv", help="also write the table as CSV")
    m.set_defaults(func=cmd_compare)

    s = sub.add_parser("show-config", help="print the resolved config")
    s.add_argument("config", nargs="?")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _usage(str(exc))


if __name__ == "__main__":
    sys.exit(main())
