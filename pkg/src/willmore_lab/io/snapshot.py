"""Run-directory layout: snapshots, per-vertex fields and the diagnostics table.

``<outdir>/snap_<k>.obj`` and ``snap_<k>.fields.csv`` hold snapshot k
(k counts snapshots, not steps); ``diagnostics.csv`` gets one row per
snapshot, appended only after both files are on disk.
"""
from __future__ import annotations

import csv
import math
import os
from pathlib import Path

import numpy as np

from ..ambient import AmbientSpace
from ..errors import IoError, SchemaMismatch, SnapshotNotFound
from ..flow import FlowState
from ..mesh import quality_report
from ..shape import field_columns, shape_state
from .obj import ambient_from_tag, read_obj, write_obj

DIAG_COLUMNS = (
    "t", "dt", "energy", "eta", "rho_of_t", "area_conc_max",
    "hs_ok", "covering_slack", "max_abs_A", "min_quality",
)
FIELD_COLUMNS = ("vertex", "H", "A_sq", "A_tf_sq", "W", "dual_area")


def snapshot_paths(outdir, k: int) -> tuple[Path, Path]:
    d = Path(outdir)
    return d / f"snap_{k}.obj", d / f"snap_{k}.fields.csv"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_fields(path, columns: dict) -> None:
    names = list(columns)
    data = [np.asarray(columns[n]) for n in names]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*data):
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise IoError(f"cannot write {str(path)!r}: {exc}") from None


def read_fields(path) -> dict:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {str(path)!r}: {exc}") from None
    if not rows or tuple(rows[0][: len(FIELD_COLUMNS)]) != FIELD_COLUMNS:
        raise SchemaMismatch(f"{path}: field columns do not start with {', '.join(FIELD_COLUMNS)}")
    cols = {}
    for j, name in enumerate(rows[0]):
        cols[name] = np.array([float(r[j]) for r in rows[1:]])
    cols["vertex"] = cols["vertex"].astype(np.int64)
    return cols


def append_diagnostics(outdir, row: dict) -> None:
    """Append one row; an existing file must carry exactly the fixed header."""
    path = Path(outdir) / "diagnostics.csv"
    missing = [c for c in DIAG_COLUMNS if c not in row]
    if missing:
        raise SchemaMismatch(f"diagnostics row lacks {', '.join(missing)}")
    try:
        new = not path.exists() or path.stat().st_size == 0
        if not new:
            with open(path, newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), [])
            if tuple(header) != DIAG_COLUMNS:
                raise SchemaMismatch(f"{path}: header differs from {','.join(DIAG_COLUMNS)}")
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(DIAG_COLUMNS)
            w.writerow([_fmt(row[c]) for c in DIAG_COLUMNS])
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise IoError(f"cannot append to {str(path)!r}: {exc}") from None


def read_diagnostics(outdir) -> list[dict]:
    path = Path(outdir) / "diagnostics.csv"
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        return []
    except OSError as exc:
        raise IoError(f"cannot read {str(path)!r}: {exc}") from None
    if not rows or tuple(rows[0]) != DIAG_COLUMNS:
        raise SchemaMismatch(f"{path}: header differs from {','.join(DIAG_COLUMNS)}")
    return [dict(zip(DIAG_COLUMNS, (float(x) for x in r))) for r in rows[1:]]


def write_snapshot(state: FlowState, outdir, k: int, row: dict | None = None, extra_fields=None) -> None:
    """Write ``snap_<k>`` files, then append the diagnostics row when given."""
    Path(outdir).mkdir(parents=True, exist_ok=True)
    obj, fields = snapshot_paths(outdir, k)
    meta = {"step": state.step_index, "dt": repr(state.dt_last), "energy": repr(state.energy)}
    write_obj(obj, state.immersion, state.ambient.chart_tag(), meta)
    write_fields(fields, field_columns(state.shape, extra_fields))
    if row is not None:
        append_diagnostics(outdir, row)


def list_snapshots(outdir) -> list[int]:
    d = Path(outdir)
    if not d.is_dir():
        return []
    ks = []
    for p in d.glob("snap_*.obj"):
        stem = p.name[len("snap_") : -len(".obj")]
        if stem.isdigit():
            ks.append(int(stem))
    return sorted(ks)


def read_snapshot(outdir, k: int, amb: AmbientSpace | None = None) -> FlowState:
    """Rebuild snapshot k; the ambient defaults to the one named in the file.

    Raises :class:`SnapshotNotFound` for a missing index and
    :class:`SchemaMismatch` when ``amb`` disagrees with the chart comment.
    """
    obj, _ = snapshot_paths(outdir, k)
    if not obj.exists():
        have = list_snapshots(outdir)
        last = f"last index is {have[-1]}" if have else "no snapshots"
        raise SnapshotNotFound(f"snapshot {k} not found in {str(outdir)!r} ({last})")
    im, meta = read_obj(obj)
    tag = meta.get("chart")
    if tag is None:
        raise SchemaMismatch(f"{obj}: missing chart comment")
    if amb is None:
        amb = ambient_from_tag(tag)
    elif amb.chart_tag() != tag:
        raise SchemaMismatch(f"{obj}: chart {tag!r} does not match ambient {amb.chart_tag()!r}")
    sh = shape_state(im, amb)
    return FlowState(
        im, sh, quality_report(im, amb),
        dt_last=float(meta.get("dt", 0.0)), step_index=int(meta.get("step", 0)),
    )
