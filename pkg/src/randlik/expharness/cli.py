"""Command line entry point: ``randlik run|rates|verify|list``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_config
from .records import fit_rate, read_csv, write_csv
from .runner import ExperimentError, csv_comments, run_experiment
from .suites import run_suite, shipped_configs


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randlik", description="Randomized-likelihood convergence experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write its CSV")
    run.add_argument("config", help="config file (or the name of a shipped config)")
    run.add_argument("-o", "--output", help="CSV path (default: experiment.output)")

    rates = sub.add_parser("rates", help="fit a log-log convergence rate to a CSV metric")
    rates.add_argument("csv")
    rates.add_argument("--metric", required=True)

    sub.add_parser("verify", help="run the built-in property, oracle and bound suite")
    sub.add_parser("list", help="list shipped example configs")
    return ap


def _resolve(name: str):
    if Path(name).is_file():
        return load_config(name)
    shipped = shipped_configs()
    if name in shipped:
        return parse_config(shipped[name], name)
    raise FileNotFoundError(f"config not found: {name}")


def _cmd_run(args) -> int:
    try:
        cfg = _resolve(args.config)
    except FileNotFoundError as exc:
        print(f"randlik: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"randlik: {exc}", file=sys.stderr)
        return 2
    try:
        records = run_experiment(cfg)
    except (ExperimentError, ConfigError) as exc:
        print(f"randlik: {exc}", file=sys.stderr)
        return 1
    out = args.output or cfg.output
    write_csv(out, records, csv_comments(cfg))
    print(f"wrote {len(records)} records to {out}")
    return 0


def _cmd_rates(args) -> int:
    if not Path(args.csv).is_file():
        print(f"randlik: csv not found: {args.csv}", file=sys.stderr)
        return 2
    try:
        fit = fit_rate(read_csv(args.csv), args.metric)
    except ValueError as exc:
        print(f"randlik: {exc}", file=sys.stderr)
        return 1
    print(f"metric={args.metric} slope={fit.slope:.6g} order={fit.order:.6g} "
          f"intercept={fit.intercept:.6g} r2={fit.r_squared:.6g} points={fit.points}")
    return 0


def _cmd_verify(args) -> int:
    ok, first, secs = run_suite()
    if ok:
        print(f"verify: all checks passed in {secs:.1f}s")
        return 0
    print(f"verify: FAILED ({first})", file=sys.stderr)
    return 1


def _cmd_list(args) -> int:
    for name, text in shipped_configs().items():
        cfg = parse_config(text, name)
        print(f"{name:28s} {cfg.kind:20s} {cfg.claim}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "rates": _cmd_rates, "verify": _cmd_verify, "list": _cmd_list}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
