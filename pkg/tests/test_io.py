import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from willmore_lab import ambient
from willmore_lab.errors import (
    BadParams,
    InvalidMesh,
    IoError,
    ParseError,
    SchemaMismatch,
    SnapshotNotFound,
    ValidationError,
    WillmoreLabError,
)
from willmore_lab.flow import initial_state
from willmore_lab.io import meshgen
from willmore_lab.io.config import SCHEMA, default_config, load_config, parse_config
from willmore_lab.io.obj import ambient_from_tag, read_obj, write_obj
from willmore_lab.io.snapshot import (
    DIAG_COLUMNS,
    FIELD_COLUMNS,
    append_diagnostics,
    list_snapshots,
    read_diagnostics,
    read_fields,
    read_snapshot,
    snapshot_paths,
    write_snapshot,
)

from conftest import cached_mesh


# ------------------------------------------------------------------ config
def test_defaults_and_echo_round_trip():
    cfg = parse_config("")
    assert cfg.values == default_config().values
    again = parse_config(cfg.echo())
    assert again.values == cfg.values


def test_parse_example_config():
    text = """
    [ambient]
    ambient = hyperbolic
    curvature = -2.0
    [mesh]
    mesh = geodesic_sphere
    radius = 0.5
    level = 2
    [flow]
    horizon = 1e-4   # inline comment
    [diagnostics]
    rho = 0.25, 0.5
    """
    cfg = parse_config(text)
    assert cfg.build_ambient().curvature == -2.0
    assert cfg.rho == (0.25, 0.5) and cfg.horizon == 1e-4
    im = cfg.build_mesh()
    assert im.n_vertices == 162
    assert "curvature" in cfg.explicit


def test_unknown_key_strict_and_lenient():
    with pytest.raises(ValidationError) as exc:
        parse_config("[flow]\nhorizn = 1\n")
    assert "horizon" in str(exc.value)
    cfg = parse_config("[flow]\nhorizn = 1\n", strict=False)
    assert cfg.warnings and cfg.horizon == 0.0


def test_problems_are_aggregated():
    with pytest.raises(ValidationError) as exc:
        parse_config("[flow]\ncfl = -1\nhorizon = abc\n[ambient]\nambient = hyperbolik\n")
    msg = str(exc.value)
    assert "cfl" in msg and "horizon" in msg and "hyperbolic" in msg
    assert len(exc.value.problems) >= 3


def test_syntax_errors():
    with pytest.raises(ParseError):
        parse_config("[flow\nhorizon = 1\n")
    with pytest.raises(ParseError):
        parse_config("[flow]\nhorizon = 1\nhorizon = 2\n")
    with pytest.raises(ParseError):
        parse_config(None)


def test_key_in_wrong_section():
    with pytest.raises(ValidationError):
        parse_config("[mesh]\nhorizon = 1\n")


def test_replace_validates():
    cfg = default_config()
    assert cfg.replace(neck_width=0.3).neck_width == 0.3
    with pytest.raises(ValidationError):
        cfg.replace(cfl=-1.0)


def test_load_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_config(tmp_path / "absent.ini")


def test_ambient_kinds_build():
    for kind in ("euclidean", "hyperbolic", "spherical", "bump"):
        amb = parse_config(f"ambient = {kind}\n").build_ambient()
        assert amb.kind in (kind, "conformal")


line = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40)


@given(st.lists(line, max_size=8).map("\n".join))
def test_parse_is_total(text):
    """Arbitrary text either parses or raises one of the two documented errors."""
    try:
        cfg = parse_config(text)
    except (ParseError, ValidationError):
        return
    assert set(cfg.values) == set(SCHEMA)


keys = st.sampled_from(sorted(SCHEMA))
vals = st.one_of(st.floats(allow_nan=False).map(repr), st.integers(-5, 5).map(str),
                 st.sampled_from(["true", "none", "euclidean", "1, 2", ""]))


@given(st.dictionaries(keys, vals, max_size=6))
def test_parse_is_total_on_known_keys(d):
    text = "\n".join(f"{k} = {v}" for k, v in d.items())
    try:
        cfg = parse_config(text)
    except (ParseError, ValidationError):
        return
    assert parse_config(cfg.echo()).values == cfg.values


# ------------------------------------------------------------------ meshgen
def test_generators_are_closed_and_oriented(E):
    for im in (meshgen.icosphere(2), meshgen.ellipsoid(1.5, 1.0, 0.7, level=2), meshgen.torus(2, 1, 16, 8),
               meshgen.dumbbell(0.2, 2)):
        chi = im.topology.euler_characteristic()
        assert chi in (0, 2)
        n = im.vertices[im.triangles]
        vol = np.einsum("fi,fi->f", n[:, 0], np.cross(n[:, 1], n[:, 2])).sum() / 6
        assert vol > 0


def test_generator_errors(S3):
    with pytest.raises(BadParams):
        meshgen.generate_mesh("cube")
    with pytest.raises(BadParams):
        meshgen.geodesic_sphere(S3, 4.0, 1)
    with pytest.raises(BadParams):
        meshgen.icosphere(meshgen.MAX_LEVEL + 1)


def test_dumbbell_neck_width():
    im = meshgen.dumbbell(0.2, 3)
    x = im.vertices
    near = np.abs(x[:, 0]) < 0.05
    assert np.sqrt(x[near, 1] ** 2 + x[near, 2] ** 2).min() == pytest.approx(0.2, rel=0.25)


# ------------------------------------------------------------------ obj
@given(seed=st.integers(0, 2**31), t=st.floats(0, 1e3))
def test_obj_round_trip_is_exact(tmp_path_factory, seed, t):
    rng = np.random.default_rng(seed)
    base = cached_mesh("icosphere", 1)
    v = base.vertices * rng.uniform(0.1, 10.0) + rng.normal(size=3)
    im = base.with_vertices(v, t)
    path = tmp_path_factory.mktemp("obj") / "m.obj"
    write_obj(path, im, "hyperbolic -1.0", {"step": 4})
    back, meta = read_obj(path)
    assert np.array_equal(back.vertices, im.vertices)
    assert np.array_equal(back.triangles, im.triangles)
    assert back.t == t
    assert meta["chart"] == "hyperbolic -1.0" and meta["step"] == "4"


def test_obj_rejects_quads(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(InvalidMesh):
        read_obj(p)
    p.write_text("v 0 zero 0\n")
    with pytest.raises(InvalidMesh):
        read_obj(p)
    with pytest.raises(IoError):
        read_obj(tmp_path / "none.obj")


@pytest.mark.parametrize("amb", [ambient.euclidean(), ambient.hyperbolic(-0.5), ambient.spherical(2.0),
                                 ambient.bump(0.1, 1.0, (0.1, 0.0, 0.0))], ids=lambda a: a.kind)
def test_chart_tag_round_trip(amb):
    back = ambient_from_tag(amb.chart_tag())
    assert back.chart_tag() == amb.chart_tag()
    p = np.array([0.1, 0.2, -0.1])
    assert np.allclose(back.metric_at(p), amb.metric_at(p), rtol=0, atol=0)


def test_bad_chart_tag():
    with pytest.raises(SchemaMismatch):
        ambient_from_tag("poincare")


# ------------------------------------------------------------------ snapshots
def test_snapshot_round_trip(tmp_path, H3):
    s = initial_state(meshgen.geodesic_sphere(H3, 0.6, 2), H3)
    row = dict.fromkeys(DIAG_COLUMNS, 0.5)
    write_snapshot(s, tmp_path, 0, row)
    write_snapshot(s, tmp_path, 1, row)
    assert list_snapshots(tmp_path) == [0, 1]
    back = read_snapshot(tmp_path, 1)
    assert np.array_equal(back.immersion.vertices, s.immersion.vertices)
    assert back.ambient.chart_tag() == H3.chart_tag()
    assert back.energy == s.energy
    fields = read_fields(snapshot_paths(tmp_path, 0)[1])
    assert tuple(fields)[: len(FIELD_COLUMNS)] == FIELD_COLUMNS
    assert np.array_equal(fields["W"], s.shape.W)
    rows = read_diagnostics(tmp_path)
    assert len(rows) == 2 and rows[0]["energy"] == 0.5


def test_missing_snapshot(tmp_path):
    with pytest.raises(SnapshotNotFound):
        read_snapshot(tmp_path, 3)
    assert issubclass(SnapshotNotFound, WillmoreLabError)


def test_diagnostics_schema_guard(tmp_path):
    with pytest.raises(SchemaMismatch):
        append_diagnostics(tmp_path, {"t": 0.0})
    (tmp_path / "diagnostics.csv").write_text("t,energy\n0,1\n")
    with pytest.raises(SchemaMismatch):
        append_diagnostics(tmp_path, dict.fromkeys(DIAG_COLUMNS, 0.0))
    with pytest.raises(SchemaMismatch):
        read_diagnostics(tmp_path)


def test_nan_and_bool_cells(tmp_path):
    row = dict.fromkeys(DIAG_COLUMNS, math.nan)
    row.update(t=0.0, hs_ok=True)
    append_diagnostics(tmp_path, row)
    text = (tmp_path / "diagnostics.csv").read_text().splitlines()
    assert text[0] == ",".join(DIAG_COLUMNS)
    back = read_diagnostics(tmp_path)[0]
    assert back["hs_ok"] == 1.0 and math.isnan(back["eta"])
