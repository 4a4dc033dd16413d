"""Lifespan campaigns: one flow per member of a mesh family, then a log-log fit.

Each experiment records the largest initial radius with concentration at
most ``eps0`` and the time its run terminated.  Experiments run in separate
processes (at most ``WILLMORE_THREADS``) and are merged by index.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .diagnostics import LifespanFit, lifespan_fit
from .errors import BadParams, InsufficientData
from .flow import initial_state
from .io.config import RunConfig
from .runner import initial_rho, run_config

LIFESPAN_COLUMNS = ("experiment", "value", "rho0", "T_hat", "reason", "steps", "max_abs_A", "covering_violations")


def thread_limit(default: int = 1) -> int:
    """Parallelism cap from ``WILLMORE_THREADS`` (invalid values fall back to the default)."""
    raw = os.environ.get("WILLMORE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


@dataclass(frozen=True)
class Experiment:
    index: int
    value: float
    rho0: float
    T_hat: float
    reason: str
    steps: int
    max_abs_A: float
    covering_violations: int


def _run_one(args) -> Experiment:
    i, value, cfg, outdir = args
    cfg_i = cfg.replace(**{cfg.vary: value})
    amb = cfg_i.build_ambient()
    s0 = initial_state(cfg_i.build_mesh(amb), amb)
    rho0 = initial_rho(s0, cfg_i, amb)
    res = run_config(cfg_i, Path(outdir) / f"exp_{i}", state0=s0)
    s = res.summary
    return Experiment(i, float(value), rho0, s.final.t, s.reason.value, s.steps,
                      s.final.shape.max_abs_A, res.covering_violations)


@dataclass
class CampaignResult:
    experiments: list
    fit: Optional[LifespanFit]
    fit_error: str
    path: Path


def run_campaign(cfg: RunConfig, outdir=None, workers: Optional[int] = None) -> CampaignResult:
    """Run every experiment, write ``lifespan.csv`` and fit log T against log rho0."""
    if not cfg.values or cfg.values["values"] is None:
        raise BadParams("campaign needs [campaign] values")
    out = Path(outdir if outdir is not None else cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.echo(), encoding="utf-8")
    jobs = [(i, v, cfg, out) for i, v in enumerate(cfg.values["values"])]
    n = min(len(jobs), workers if workers is not None else thread_limit())
    if n <= 1:
        exps = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            exps = list(pool.map(_run_one, jobs))
    exps.sort(key=lambda e: e.index)
    path = out / "lifespan.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LIFESPAN_COLUMNS)
        for e in exps:
            w.writerow([e.index, repr(e.value), repr(e.rho0), repr(e.T_hat), e.reason, e.steps,
                        repr(e.max_abs_A), e.covering_violations])
    fit, err = None, ""
    try:
        fit = lifespan_fit([(e.rho0, e.T_hat) for e in exps])
    except InsufficientData as exc:
        err = str(exc)
    return CampaignResult(exps, fit, err, path)


def read_lifespan(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
