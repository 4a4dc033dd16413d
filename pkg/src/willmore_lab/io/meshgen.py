"""Closed test surfaces: spheres, ellipsoids, tori, dumbbells, geodesic spheres."""
from __future__ import annotations

import math

import numpy as np

from ..ambient import AmbientSpace
from ..errors import BadParams
from ..mesh import Immersion

MAX_LEVEL = 7

GENERATORS = ("icosphere", "ellipsoid", "torus", "dumbbell", "geodesic_sphere")


def _icosahedron():
    p = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def _subdivide(v, f):
    n = len(v)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, inv = np.unique(e[:, 0] * n + e[:, 1], return_inverse=True)
    a, b = uniq // n, uniq % n
    mid = 0.5 * (v[a] + v[b])
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    m = len(f)
    ab, bc, ca = (inv[:m] + n, inv[m : 2 * m] + n, inv[2 * m :] + n)
    f0, f1, f2 = f[:, 0], f[:, 1], f[:, 2]
    nf = np.concatenate(
        [
            np.stack([f0, ab, ca], 1),
            np.stack([ab, f1, bc], 1),
            np.stack([ca, bc, f2], 1),
            np.stack([ab, bc, ca], 1),
        ]
    )
    return np.concatenate([v, mid]), nf


def unit_icosphere(level: int):
    """Vertices on the unit sphere and outward-oriented faces."""
    if not (isinstance(level, (int, np.integer)) and 0 <= level <= MAX_LEVEL):
        raise BadParams(f"icosphere level must be an integer in [0, {MAX_LEVEL}], got {level!r}")
    v, f = _icosahedron()
    for _ in range(int(level)):
        v, f = _subdivide(v, f)
    return v, f


def _signed_volume(v, f):
    return np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0


def _orient_outward(v, f):
    return f if _signed_volume(v, f) > 0 else f[:, ::-1].copy()


def icosphere(level=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    if not radius > 0:
        raise BadParams("radius must be positive")
    v, f = unit_icosphere(level)
    return Immersion.from_arrays(radius * v + np.asarray(center, float), f)


def ellipsoid(a=1.5, b=1.0, c=1.0, level=3, center=(0.0, 0.0, 0.0)):
    if min(a, b, c) <= 0:
        raise BadParams("ellipsoid semi-axes must be positive")
    v, f = unit_icosphere(level)
    return Immersion.from_arrays(v * np.array([a, b, c]) + np.asarray(center, float), f)


def torus(R=2.0, r=1.0, nu=64, nv=32, center=(0.0, 0.0, 0.0)):
    if not (R > r > 0):
        raise BadParams("torus needs R > r > 0")
    if int(nu) < 3 or int(nv) < 3:
        raise BadParams("torus needs nu, nv >= 3")
    nu, nv = int(nu), int(nv)
    u = 2 * np.pi * np.arange(nu) / nu
    w = 2 * np.pi * np.arange(nv) / nv
    U, W = np.meshgrid(u, w, indexing="ij")
    v = np.stack(
        [(R + r * np.cos(W)) * np.cos(U), (R + r * np.cos(W)) * np.sin(U), r * np.sin(W)], -1
    ).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a = i * nv + j
    b = ((i + 1) % nu) * nv + j
    c = ((i + 1) % nu) * nv + (j + 1) % nv
    d = i * nv + (j + 1) % nv
    f = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    # the torus encloses positive volume with outward normals
    f = _orient_outward(v, f)
    return Immersion.from_arrays(v + np.asarray(center, float), f)


def cassini_radius(theta, neck_width, c=1.0):
    """Polar radius of the Cassini oval with waist half-width ``neck_width``."""
    a4 = (c * c + neck_width**2) ** 2
    c2 = np.cos(2 * theta)
    return np.sqrt(c * c * c2 + np.sqrt(c**4 * c2**2 + a4 - c**4))


def dumbbell(neck_width=0.2, level=3):
    """Surface of revolution of a Cassini oval about its long (z) axis.

    Two bulbs joined by a waist of radius ``neck_width``; curvature
    concentrates at the waist as the width shrinks.
    """
    if not (0 < neck_width < 2):
        raise BadParams("dumbbell neck_width must lie in (0, 2)")
    v, f = unit_icosphere(level)
    theta = np.arccos(np.clip(v[:, 2], -1.0, 1.0))
    r = cassini_radius(theta, neck_width)
    return Immersion.from_arrays(v * r[:, None], f)


def geodesic_sphere(amb: AmbientSpace, radius=1.0, level=3, center=(0.0, 0.0, 0.0)):
    """Vertices at ambient distance ``radius`` from ``center`` via the exponential map."""
    if not radius > 0:
        raise BadParams("geodesic sphere radius must be positive")
    if radius >= amb.inj_radius:
        raise BadParams("geodesic sphere radius must be below the injectivity radius")
    v, f = unit_icosphere(level)
    c = np.asarray(center, dtype=float)
    amb.check_chart(c)
    lam = amb.conformal_factor(c)
    pts = amb.exp_map(np.broadcast_to(c, v.shape), v * (radius / lam))
    amb.check_chart(pts)
    return Immersion.from_arrays(pts, f)


def generate_mesh(name: str, params: dict | None = None, amb: AmbientSpace | None = None) -> Immersion:
    """Build a named test surface; ``params`` are the generator keyword arguments."""
    params = dict(params or {})
    try:
        if name == "icosphere":
            return icosphere(**params)
        if name == "ellipsoid":
            return ellipsoid(**params)
        if name == "torus":
            return torus(**params)
        if name == "dumbbell":
            return dumbbell(**params)
        if name == "geodesic_sphere":
            if amb is None:
                raise BadParams("geodesic_sphere needs an ambient space")
            return geodesic_sphere(amb, **params)
    except TypeError as exc:
        raise BadParams(f"{name}: {exc}") from None
    raise BadParams(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
