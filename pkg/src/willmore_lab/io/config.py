"""Flat ``key = value`` run configuration with ``[section]`` headers.

Keys may also appear before the first header; each key name belongs to
exactly one section, so its section is implied.  Parsing never fails
fast: every problem is collected into one :class:`ValidationError`.
"""
from __future__ import annotations

import configparser
import difflib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .. import ambient as ambient_mod
from ..ambient import AmbientSpace
from ..errors import BadParams, ParseError, ValidationError
from ..flow import StepControl
from ..mesh import Immersion
from .meshgen import GENERATORS, MAX_LEVEL, generate_mesh

_TOP = "__top__"


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text):
    f = float(text)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(f)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text):
    parts = [p for p in text.replace(",", " ").split()]
    if not parts:
        raise ValueError("expected at least one number")
    return tuple(_float(p) for p in parts)


def _vec3(text):
    v = _floats(text)
    if len(v) != 3:
        raise ValueError(f"expected three numbers, got {len(v)}")
    return v


def _optional(parse):
    def inner(text):
        if text.strip().lower() in ("", "none"):
            return None
        return parse(text)

    return inner


def _str(text):
    return text.strip()


@dataclass(frozen=True)
class _Key:
    section: str
    parse: Callable
    default: Any
    doc: str


# generator parameters live in [mesh]; `_GEN_KEYS` maps each to its generators
_GEN_KEYS = {
    "level": ("icosphere", "ellipsoid", "dumbbell", "geodesic_sphere"),
    "radius": ("icosphere", "geodesic_sphere"),
    "center": ("icosphere", "ellipsoid", "torus", "geodesic_sphere"),
    "a": ("ellipsoid",),
    "b": ("ellipsoid",),
    "c": ("ellipsoid",),
    "R": ("torus",),
    "r": ("torus",),
    "nu": ("torus",),
    "nv": ("torus",),
    "neck_width": ("dumbbell",),
}

SCHEMA: dict[str, _Key] = {
    # ambient
    "ambient": _Key("ambient", _str, "euclidean", "euclidean | hyperbolic | spherical | bump"),
    "curvature": _Key("ambient", _optional(_float), None, "sectional curvature of a model space"),
    "amplitude": _Key("ambient", _float, 0.1, "bump amplitude of the conformal exponent"),
    "width": _Key("ambient", _float, 1.0, "bump width"),
    "bump_center": _Key("ambient", _vec3, (0.0, 0.0, 0.0), "bump center"),
    # mesh
    "mesh": _Key("mesh", _str, "icosphere", "generator name"),
    "mesh_file": _Key("mesh", _optional(_str), None, "OBJ file used instead of a generator"),
    "level": _Key("mesh", _int, 3, "icosphere subdivision level"),
    "radius": _Key("mesh", _float, 1.0, "sphere radius"),
    "center": _Key("mesh", _vec3, (0.0, 0.0, 0.0), "surface center"),
    "a": _Key("mesh", _float, 1.5, "ellipsoid semi-axis x"),
    "b": _Key("mesh", _float, 1.0, "ellipsoid semi-axis y"),
    "c": _Key("mesh", _float, 1.0, "ellipsoid semi-axis z"),
    "R": _Key("mesh", _float, 2.0, "torus major radius"),
    "r": _Key("mesh", _float, 1.0, "torus minor radius"),
    "nu": _Key("mesh", _int, 64, "torus samples around the axis"),
    "nv": _Key("mesh", _int, 32, "torus samples around the tube"),
    "neck_width": _Key("mesh", _float, 0.2, "dumbbell waist half-width"),
    # flow
    "horizon": _Key("flow", _float, 0.0, "final time"),
    "cfl": _Key("flow", _float, 0.05, "CFL coefficient"),
    "max_dt": _Key("flow", _float, math.inf, "upper bound on the time step"),
    "energy_tol": _Key("flow", _float, 1e-8, "relative energy increase that rejects a step"),
    "min_angle_deg": _Key("flow", _float, 5.0, "smallest acceptable triangle angle"),
    "max_aspect": _Key("flow", _float, 25.0, "largest acceptable aspect ratio"),
    "length_scale": _Key("flow", _float, 1.0, "curvature length of the CFL clamp and cap"),
    "curvature_cap": _Key("flow", _optional(_float), None, "|A| abort level (default 1000/length_scale)"),
    "max_steps": _Key("flow", _optional(_int), None, "step budget"),
    "max_rejections": _Key("flow", _int, 20, "halvings before a step fails"),
    "snapshot_every": _Key("flow", _int, 0, "snapshot cadence in steps (0: first and last)"),
    # diagnostics
    "rho": _Key("diagnostics", _floats, (0.5,), "ball radii; the first drives the csv columns"),
    "eps0": _Key("diagnostics", _float, 1e-2, "curvature concentration threshold"),
    "sigma0": _Key("diagnostics", _float, 0.5, "area concentration threshold"),
    "radius_grid": _Key(
        "diagnostics", _floats, tuple(0.05 * k for k in range(1, 21)), "radii scanned for rho(t)"
    ),
    "diagnostics": _Key("diagnostics", _bool, True, "compute the diagnostics row per snapshot"),
    "monitor_integrals": _Key("diagnostics", _bool, False, "accumulate localised curvature integrals"),
    # campaign
    "vary": _Key("campaign", _str, "neck_width", "mesh key varied across experiments"),
    "values": _Key("campaign", _optional(_floats), None, "values of the varied key"),
    # output
    "outdir": _Key("output", _str, "willmore_out", "output directory"),
    "deterministic": _Key("output", _bool, True, "single-threaded, fixed evaluation order"),
    "strict": _Key("output", _bool, True, "reject unknown keys"),
}

SECTIONS = tuple(dict.fromkeys(k.section for k in SCHEMA.values()))
AMBIENT_KINDS = ("euclidean", "hyperbolic", "spherical", "bump")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` holds every schema key."""

    values: dict
    explicit: frozenset = frozenset()
    warnings: tuple = ()
    text: str = field(default="", repr=False)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def replace(self, **changes) -> "RunConfig":
        """Copy with some keys changed, validated again."""
        vals = dict(self.values)
        vals.update(changes)
        problems = _validate(vals)
        if problems:
            raise ValidationError(problems)
        return RunConfig(vals, self.explicit | frozenset(changes), self.warnings, self.text)

    def build_ambient(self) -> AmbientSpace:
        return make_ambient(self.values)

    def generator_params(self) -> dict:
        gen = self.values["mesh"]
        return {k: self.values[k] for k, gens in _GEN_KEYS.items() if gen in gens}

    def build_mesh(self, amb: Optional[AmbientSpace] = None) -> Immersion:
        if self.values["mesh_file"]:
            from .obj import read_obj

            im, _ = read_obj(self.values["mesh_file"])
            return im
        amb = amb if amb is not None else self.build_ambient()
        params = self.generator_params()
        if "center" in params:
            params["center"] = tuple(params["center"])
        return generate_mesh(self.values["mesh"], params, amb)

    def step_control(self) -> StepControl:
        v = self.values
        return StepControl(
            cfl=v["cfl"],
            max_dt=v["max_dt"],
            energy_tol=v["energy_tol"],
            min_angle_deg=v["min_angle_deg"],
            max_aspect=v["max_aspect"],
            length_scale=v["length_scale"],
            curvature_cap=v["curvature_cap"],
            max_rejections=v["max_rejections"],
            max_steps=v["max_steps"],
        )

    def echo(self) -> str:
        """Canonical text of every key, grouped by section; parses back to an equal config."""
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for name, key in SCHEMA.items():
                if key.section == sec:
                    lines.append(f"{name} = {_format(self.values[name])}")
            lines.append("")
        return "\n".join(lines)


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def make_ambient(v: dict) -> AmbientSpace:
    kind = v["ambient"]
    if kind == "euclidean":
        return ambient_mod.euclidean()
    if kind == "hyperbolic":
        k = v["curvature"]
        return ambient_mod.hyperbolic(-1.0 if k is None else k)
    if kind == "spherical":
        k = v["curvature"]
        return ambient_mod.spherical(1.0 if k is None else k)
    if kind == "bump":
        return ambient_mod.bump(v["amplitude"], v["width"], v["bump_center"])
    raise BadParams(f"unknown ambient {kind!r}")


def _suggest(name, choices):
    close = difflib.get_close_matches(name, list(choices), n=1, cutoff=0.5)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _validate(v: dict) -> list[str]:
    """Every violated constraint, phrased with the offending key."""
    p = []
    kind = v["ambient"]
    if kind not in AMBIENT_KINDS:
        p.append(f"ambient: unknown kind {kind!r}{_suggest(kind, AMBIENT_KINDS)}")
    k = v["curvature"]
    if k is not None:
        if kind == "hyperbolic" and not k < 0:
            p.append("curvature: hyperbolic ambient needs negative curvature")
        if kind == "spherical" and not k > 0:
            p.append("curvature: spherical ambient needs positive curvature")
        if kind in ("euclidean", "bump") and k != 0:
            p.append(f"curvature: not used by the {kind} ambient")
    if kind == "bump" and not v["width"] > 0:
        p.append("width: must be positive")

    gen = v["mesh"]
    if v["mesh_file"] is None and gen not in GENERATORS:
        p.append(f"mesh: unknown generator {gen!r}{_suggest(gen, GENERATORS)}")
    lv = v["level"]
    if not 0 <= lv <= MAX_LEVEL:
        p.append(f"level: must lie in [0, {MAX_LEVEL}]")
    for key in ("radius", "a", "b", "c", "R", "r"):
        if not v[key] > 0:
            p.append(f"{key}: must be positive")
    if gen == "torus" and not v["R"] > v["r"]:
        p.append("R: torus needs R > r")
    for key in ("nu", "nv"):
        if v[key] < 3:
            p.append(f"{key}: must be at least 3")
    if not 0 < v["neck_width"] < 2:
        p.append("neck_width: must lie in (0, 2)")

    fl = v
    if not (fl["horizon"] >= 0 and math.isfinite(fl["horizon"])):
        p.append("horizon: must be finite and nonnegative")
    if not fl["cfl"] > 0:
        p.append("cfl: must be positive")
    if not fl["max_dt"] > 0:
        p.append("max_dt: must be positive")
    if not fl["energy_tol"] >= 0:
        p.append("energy_tol: must be nonnegative")
    if not 0 <= fl["min_angle_deg"] < 60:
        p.append("min_angle_deg: must lie in [0, 60)")
    if not fl["max_aspect"] >= 1:
        p.append("max_aspect: must be at least 1")
    if not (fl["length_scale"] > 0 and math.isfinite(fl["length_scale"])):
        p.append("length_scale: must be positive and finite")
    if fl["curvature_cap"] is not None and not fl["curvature_cap"] > 0:
        p.append("curvature_cap: must be positive")
    if fl["max_steps"] is not None and fl["max_steps"] < 0:
        p.append("max_steps: must be nonnegative")
    if fl["max_rejections"] < 0:
        p.append("max_rejections: must be nonnegative")
    if fl["snapshot_every"] < 0:
        p.append("snapshot_every: must be nonnegative")

    inj = math.inf
    if kind in AMBIENT_KINDS and not p:
        try:
            amb = make_ambient(v)
            inj = amb.inj_radius
        except (BadParams, ValueError) as exc:
            p.append(f"ambient: {exc}")
    for key in ("rho", "radius_grid"):
        for r in v[key]:
            if not (r > 0 and math.isfinite(r)):
                p.append(f"{key}: radius {r!r} must be positive and finite")
            elif not r < inj:
                p.append(f"{key}: radius {r!r} is not below the injectivity radius {inj:g}")
    if gen == "geodesic_sphere" and not v["radius"] < inj:
        p.append(f"radius: geodesic sphere radius must be below the injectivity radius {inj:g}")
    if not v["eps0"] >= 0:
        p.append("eps0: must be nonnegative")
    if not v["sigma0"] >= 0:
        p.append("sigma0: must be nonnegative")
    if v["values"] is not None:
        if v["vary"] not in _GEN_KEYS:
            p.append(f"vary: {v['vary']!r} is not a mesh parameter{_suggest(v['vary'], _GEN_KEYS)}")
    return p


def parse_config(text: str, strict: Optional[bool] = None) -> RunConfig:
    """Parse and validate; raises ParseError (syntax) or ValidationError (content).

    ``strict`` overrides the ``strict`` key: unknown keys are errors in
    strict mode and warnings otherwise.
    """
    if not isinstance(text, str):
        raise ParseError("config text must be a string")
    cp = configparser.ConfigParser(
        interpolation=None,
        delimiters=("=",),
        comment_prefixes=("#", ";"),
        inline_comment_prefixes=("#", ";"),
        empty_lines_in_values=False,
        default_section="\x00defaults",
    )
    cp.optionxform = str
    try:
        cp.read_string(f"[{_TOP}]\n" + text)
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ParseError(f"cannot parse {line}", lineno - 1) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        what = getattr(exc, "option", None) or exc.section
        raise ParseError(f"duplicate entry {what!r}", (exc.lineno or 1) - 1) from None
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0]) from None

    raw: dict[str, str] = {}
    problems: list[str] = []
    unknown: list[str] = []
    for sec in cp.sections():
        if sec != _TOP and sec not in SECTIONS:
            problems.append(f"[{sec}]: unknown section{_suggest(sec, SECTIONS)}")
            continue
        for name, value in cp.items(sec):
            key = SCHEMA.get(name)
            if key is None:
                unknown.append(f"[{sec if sec != _TOP else 'top'}] {name}: unknown key{_suggest(name, SCHEMA)}")
                continue
            if sec != _TOP and key.section != sec:
                problems.append(f"{name}: belongs to [{key.section}], found in [{sec}]")
                continue
            if name in raw:
                problems.append(f"{name}: given more than once")
                continue
            raw[name] = value

    values = {}
    for name, key in SCHEMA.items():
        if name in raw:
            try:
                values[name] = key.parse(raw[name])
            except (ValueError, OverflowError) as exc:
                problems.append(f"{name}: {exc}")
                values[name] = key.default
        else:
            values[name] = key.default
    is_strict = values["strict"] if strict is None else strict
    warnings = ()
    if is_strict:
        problems.extend(unknown)
    else:
        warnings = tuple(unknown)
    # broken values were replaced by defaults above, so content checks still apply
    problems.extend(_validate(values))
    if problems:
        raise ValidationError(problems)
    return RunConfig(values, frozenset(raw), warnings, text)


def load_config(path, strict: Optional[bool] = None) -> RunConfig:
    from ..errors import IoError

    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read config {str(path)!r}: {exc}") from None
    return parse_config(text, strict)


def default_config(**overrides) -> RunConfig:
    """Defaults for every key, with keyword overrides (validated)."""
    vals = {name: key.default for name, key in SCHEMA.items()}
    vals.update(overrides)
    problems = _validate(vals)
    if problems:
        raise ValidationError(problems)
    return RunConfig(vals, frozenset(overrides))
