"""Command-line entry point ``willmore-lab``.

Exit codes: 0 success, 1 invalid input (config, arguments, missing files),
2 runtime failure, 3 a verification check failed.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import (
    BadParams,
    IoError,
    ParseError,
    SchemaMismatch,
    SnapshotNotFound,
    ValidationError,
    WillmoreLabError,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _InputError(Exception):
    """Unreadable user input: a config file or run directory."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="willmore-lab", description="Willmore flow runs, verification suites and lifespan campaigns.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run one configured flow")
    r.add_argument("--config", required=True)
    r.add_argument("--outdir")
    v = sub.add_parser("verify", help="run verification suites and print a table")
    v.add_argument("--config", help="take the ambient from this config")
    v.add_argument("--suite", default="all", choices=("identities", "evolution", "sobolev", "all"))
    v.add_argument("--outdir", help="also write the table as verify.csv here")
    lf = sub.add_parser("lifespan", help="run a campaign and fit log T against log rho0")
    lf.add_argument("--config", required=True)
    lf.add_argument("--outdir")
    i = sub.add_parser("inspect", help="summarise a run directory without modifying it")
    i.add_argument("--outdir", required=True)
    i.add_argument("--config", help=argparse.SUPPRESS)
    return p


def _load(path):
    from .io.config import load_config

    try:
        return load_config(path)
    except IoError as exc:
        raise _InputError(str(exc)) from None


def cmd_run(args, out) -> int:
    from .runner import run_config, summary_dict

    cfg = _load(args.config)
    res = run_config(cfg, args.outdir)
    s = summary_dict(res)
    print(f"reason: {s['reason']}", file=out)
    for key in ("t", "steps", "rejections", "energy", "max_abs_A", "snapshots", "covering_violations"):
        print(f"{key}: {s[key]}", file=out)
    if s["blowup_time"] is not None:
        print(f"blowup_time: {s['blowup_time']}", file=out)
    if s["message"]:
        print(f"message: {s['message']}", file=out)
    print(f"outdir: {res.outdir}", file=out)
    return EXIT_OK


def cmd_verify(args, out) -> int:
    from .verification import run_suite

    amb = _load(args.config).build_ambient() if args.config else None
    checks = run_suite(args.suite, amb)
    print(f"{'check':<44} {'value':>14}    {'bound':<12} result", file=out)
    for c in checks:
        print(c.line(), file=out)
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed", file=out)
    if args.outdir:
        import csv

        d = Path(args.outdir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "verify.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "value", "relation", "bound", "passed"])
            for c in checks:
                w.writerow([c.name, repr(c.value), c.relation, repr(c.bound), int(c.passed)])
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_lifespan(args, out) -> int:
    from .campaign import run_campaign

    cfg = _load(args.config)
    res = run_campaign(cfg, args.outdir)
    print(f"{'exp':>3} {'value':>10} {'rho0':>10} {'T_hat':>12} reason", file=out)
    for e in res.experiments:
        print(f"{e.index:>3} {e.value:>10.4g} {e.rho0:>10.4g} {e.T_hat:>12.6g} {e.reason}", file=out)
    if res.fit is None:
        print(f"fit: unavailable ({res.fit_error})", file=out)
    else:
        f = res.fit
        print(f"fit: slope={f.slope:.6g} intercept={f.intercept:.6g} r2={f.r2:.6g} "
              f"c_hat={f.c_hat:.6g} bound_ok={f.all_ok} ({int(f.bound_ok.sum())}/{f.bound_ok.size})", file=out)
    print(f"lifespan.csv: {res.path}", file=out)
    return EXIT_OK


def cmd_inspect(args, out) -> int:
    from .io.snapshot import list_snapshots, read_diagnostics, snapshot_paths
    from .io.obj import read_obj

    d = Path(args.outdir)
    if not d.is_dir():
        raise _InputError(f"run directory {str(d)!r} does not exist")
    ks = list_snapshots(d)
    rows = read_diagnostics(d)
    print(f"run directory: {d}", file=out)
    print(f"snapshots: {len(ks)}" + (f" (indices {ks[0]}..{ks[-1]})" if ks else ""), file=out)
    print(f"diagnostics rows: {len(rows)}", file=out)
    if ks:
        _, meta = read_obj(snapshot_paths(d, ks[-1])[0])
        print(f"chart: {meta.get('chart', '?')}", file=out)
        print(f"last snapshot: {ks[-1]} t={meta.get('t', '?')} step={meta.get('step', '?')}", file=out)
    if rows:
        first, last = rows[0], rows[-1]
        print(f"energy: {first['energy']:.10g} -> {last['energy']:.10g}", file=out)
        print(f"max |A|: {max(r['max_abs_A'] for r in rows):.6g}", file=out)
        etas = [r["eta"] for r in rows if not math.isnan(r["eta"])]
        if etas:
            print(f"max eta: {max(etas):.6g}", file=out)
        bad = [i for i, r in enumerate(rows) if r["hs_ok"] == 0]
        print(f"rows with Sobolev check failing: {bad if bad else 'none'}", file=out)
    if len(rows) != len(ks):
        print(f"warning: {len(ks)} snapshots but {len(rows)} diagnostics rows", file=out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "lifespan": cmd_lifespan, "inspect": cmd_inspect}


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=err)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        return COMMANDS[args.command](args, out)
    except (_InputError, ParseError, ValidationError, BadParams, SchemaMismatch, SnapshotNotFound) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except WillmoreLabError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=err)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime failure: {exc}", file=err)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
