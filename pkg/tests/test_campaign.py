import math

import pytest

from willmore_lab.campaign import LIFESPAN_COLUMNS, read_lifespan, run_campaign, thread_limit
from willmore_lab.errors import BadParams
from willmore_lab.io.config import parse_config
from willmore_lab.io.snapshot import read_diagnostics
from willmore_lab.runner import run_config, summary_dict

CAMPAIGN = """
[mesh]
mesh = dumbbell
level = 2
[flow]
horizon = 1
max_steps = 2
length_scale = 0.1
[diagnostics]
eps0 = 2.0
rho = 0.25
[campaign]
vary = neck_width
values = 0.4, 0.3, 0.2, 0.15
"""


@pytest.mark.parametrize("raw,expected", [("", 1), ("3", 3), ("0", 1), ("x", 1), ("-2", 1)])
def test_thread_limit(monkeypatch, raw, expected):
    monkeypatch.setenv("WILLMORE_THREADS", raw)
    assert thread_limit() == expected


def test_campaign_writes_lifespan_csv(tmp_path):
    res = run_campaign(parse_config(CAMPAIGN), tmp_path / "serial", workers=1)
    rows = read_lifespan(res.path)
    assert tuple(rows[0]) == LIFESPAN_COLUMNS
    assert [float(r["value"]) for r in rows] == [0.4, 0.3, 0.2, 0.15]
    assert all(r["reason"] == "MaxSteps" for r in rows)
    assert all((tmp_path / "serial" / f"exp_{i}" / "diagnostics.csv").exists() for i in range(4))
    rho0 = [e.rho0 for e in res.experiments]
    assert rho0 == sorted(rho0, reverse=True) and rho0[0] > 0
    assert res.fit is not None and math.isfinite(res.fit.slope) and res.fit.all_ok


def test_campaign_parallel_matches_serial(tmp_path):
    a = run_campaign(parse_config(CAMPAIGN), tmp_path / "a", workers=1)
    b = run_campaign(parse_config(CAMPAIGN), tmp_path / "b", workers=2)
    assert a.experiments == b.experiments
    assert a.path.read_bytes() == b.path.read_bytes()


def test_campaign_needs_values(tmp_path):
    with pytest.raises(BadParams):
        run_campaign(parse_config("[flow]\nhorizon = 0\n"), tmp_path)


def test_campaign_reports_insufficient_data(tmp_path):
    cfg = parse_config(CAMPAIGN.replace("0.4, 0.3, 0.2, 0.15", "0.4, 0.3"))
    res = run_campaign(cfg, tmp_path, workers=1)
    assert res.fit is None and "at least 4" in res.fit_error


def test_run_config_monitor_and_summary(tmp_path):
    cfg = parse_config("[mesh]\nmesh = ellipsoid\nlevel = 2\n[flow]\nmax_steps = 3\nhorizon = 1\n"
                       "[diagnostics]\nmonitor_integrals = true\n")
    res = run_config(cfg, tmp_path)
    s = summary_dict(res)
    assert s["reason"] == "MaxSteps" and s["steps"] == 3 and s["snapshots"] == 2
    assert s["covering_violations"] == 0
    lines = (tmp_path / "monitor.csv").read_text().splitlines()
    assert lines[0].startswith("t,") and len(lines) == 3
    rows = read_diagnostics(tmp_path)
    assert all(r["hs_ok"] == 1 for r in rows)
    assert rows[-1]["energy"] <= rows[0]["energy"]


def test_run_config_without_diagnostics(tmp_path):
    cfg = parse_config("[flow]\nmax_steps = 1\nhorizon = 1\n[diagnostics]\ndiagnostics = false\n")
    res = run_config(cfg, tmp_path)
    rows = read_diagnostics(tmp_path)
    assert res.snapshots == 2 and math.isnan(rows[0]["eta"]) and math.isfinite(rows[0]["energy"])
