"""Wavefront OBJ with chart and time comments, 17 significant digits."""
from __future__ import annotations

import os

import numpy as np

from .. import ambient as ambient_mod
from ..ambient import AmbientSpace
from ..errors import InvalidMesh, IoError, SchemaMismatch
from ..mesh import Immersion


def write_obj(path, im: Immersion, chart: str = "euclidean", meta: dict | None = None) -> None:
    """Write vertices as ``%.17g`` so that doubles round-trip exactly."""
    lines = [f"# chart: {chart}", f"# t: {im.t!r}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}: {v}")
    lines.extend("v %.17g %.17g %.17g" % tuple(p) for p in im.vertices)
    lines.extend("f %d %d %d" % tuple(t + 1) for t in im.triangles)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {str(path)!r}: {exc}") from None


def read_obj(path) -> tuple[Immersion, dict]:
    """Return the immersion and the ``# key: value`` header comments."""
    meta, verts, faces = {}, [], []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                s = line.strip()
                if not s:
                    continue
                if s.startswith("#"):
                    key, sep, val = s[1:].partition(":")
                    if sep:
                        meta.setdefault(key.strip(), val.strip())
                    continue
                parts = s.split()
                try:
                    if parts[0] == "v":
                        verts.append([float(x) for x in parts[1:4]])
                    elif parts[0] == "f":
                        faces.append([int(x.split("/")[0]) - 1 for x in parts[1:]])
                except ValueError:
                    raise InvalidMesh(f"{path}: bad record on line {lineno}") from None
    except OSError as exc:
        raise IoError(f"cannot read {str(path)!r}: {exc}") from None
    if any(len(f) != 3 for f in faces):
        raise InvalidMesh(f"{path}: only triangles are supported")
    t = float(meta.get("t", 0.0))
    im = Immersion.from_arrays(np.array(verts, dtype=float).reshape(-1, 3),
                               np.array(faces, dtype=np.int64).reshape(-1, 3), t)
    return im, meta


def ambient_from_tag(tag: str) -> AmbientSpace:
    """Rebuild an ambient space from its ``chart_tag`` text."""
    parts = tag.split()
    try:
        if parts == ["euclidean"]:
            return ambient_mod.euclidean()
        if parts[0] == "hyperbolic" and len(parts) == 2:
            return ambient_mod.hyperbolic(float(parts[1]))
        if parts[0] == "spherical" and len(parts) == 2:
            return ambient_mod.spherical(float(parts[1]))
        if parts[:2] == ["conformal", "bump"] and len(parts) == 7:
            a, w, x, y, z = (float(p) for p in parts[2:])
            return ambient_mod.bump(a, w, (x, y, z))
    except (ValueError, IndexError):
        pass
    raise SchemaMismatch(f"unrecognised chart tag {tag!r}")
