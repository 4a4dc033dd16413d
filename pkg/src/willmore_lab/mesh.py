"""Closed oriented triangle meshes immersed in an ambient chart.

First-order geometry only: induced metric, areas, normals, the cotangent
Laplace-Beltrami operator and per-triangle gradients.  Everything is measured
in the ambient metric, so the same code serves every ambient kind.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .ambient import AmbientSpace
from .errors import DegenerateTriangle, InvalidMesh, NonFiniteInput

AREA_FLOOR = 1e-12


class Topology:
    """Connectivity of a closed, oriented, connected triangle mesh.

    Instances are immutable and shared by every immersion along a flow, so
    neighbourhood tables are computed once.
    """

    def __init__(self, triangles, n_vertices=None):
        t = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64))
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise InvalidMesh("triangles must be a non-empty (m, 3) integer array")
        n = int(t.max()) + 1 if n_vertices is None else int(n_vertices)
        if t.min() < 0 or t.max() >= n:
            raise InvalidMesh("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise InvalidMesh("triangle with repeated vertex")
        t.setflags(write=False)
        self.triangles = t
        self.n_vertices = n

        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = directed[:, 0] * n + directed[:, 1]
        if np.unique(key).size != key.size:
            raise InvalidMesh("mesh is not consistently oriented (repeated directed edge)")
        und = np.sort(directed, axis=1)
        edges, inverse, counts = np.unique(
            und[:, 0] * n + und[:, 1], return_inverse=True, return_counts=True
        )
        if np.any(counts != 2):
            raise InvalidMesh("mesh is not closed: every edge needs exactly two triangles")
        self.edges = np.stack([edges // n, edges % n], axis=1)
        m = len(t)
        # tri_edges[f, c]: index of the edge opposite corner c of triangle f
        corner_of = np.concatenate([np.full(m, 2), np.full(m, 0), np.full(m, 1)])
        tri_of = np.concatenate([np.arange(m)] * 3)
        self.tri_edges = np.empty((m, 3), dtype=np.int64)
        self.tri_edges[tri_of, corner_of] = inverse.ravel()
        used = np.zeros(n, dtype=bool)
        used[t.ravel()] = True
        if not used.all():
            raise InvalidMesh("mesh has isolated vertices")
        ncomp, _ = connected_components(self.adjacency, directed=False)
        if ncomp != 1:
            raise InvalidMesh(f"mesh has {ncomp} connected components")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    def genus(self) -> int:
        return (2 - self.euler_characteristic()) // 2

    @cached_property
    def adjacency(self):
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        a = sparse.coo_matrix(
            (data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)
        )
        return a.tocsr()

    @cached_property
    def vertex_triangles(self):
        """Sparse (n, m) incidence of vertices in triangles."""
        t = self.triangles
        m = len(t)
        return sparse.csr_matrix(
            (np.ones(3 * m), (t.ravel(), np.repeat(np.arange(m), 3))),
            shape=(self.n_vertices, m),
        )

    def ring(self, k: int):
        """Padded k-ring neighbourhoods (vertex itself excluded).

        Returns ``(idx, mask, dist)`` of shape (n, K): neighbour indices, a
        validity mask and the combinatorial ring distance of each entry.
        """
        return self._ring(k)

    def _ring(self, k):
        cache = self.__dict__.setdefault("_rings", {})
        if k in cache:
            return cache[k]
        n = self.n_vertices
        a = self.adjacency
        eye = sparse.identity(n, format="csr")
        reach = eye.copy()
        dist = sparse.csr_matrix((n, n))
        for level in range(1, k + 1):
            new = ((reach @ (a + eye)) > 0).astype(float)
            fresh = new - (reach > 0).astype(float)
            fresh.eliminate_zeros()
            dist = dist + level * fresh
            reach = new
        dist = dist.tocsr()
        dist.sort_indices()
        counts = np.diff(dist.indptr)
        K = int(counts.max())
        idx = np.zeros((n, K), dtype=np.int64)
        dd = np.zeros((n, K), dtype=np.int64)
        mask = np.arange(K)[None, :] < counts[:, None]
        idx[mask] = dist.indices
        dd[mask] = dist.data.astype(np.int64)
        idx[~mask] = np.repeat(np.arange(n), K).reshape(n, K)[~mask]
        out = (idx, mask, dd)
        cache[k] = out
        return out

    @cached_property
    def triangle_neighbours(self):
        """Padded one-ring of triangles around each triangle (sharing a vertex)."""
        vt = self.vertex_triangles
        tt = (vt.T @ vt).tocsr()
        tt.setdiag(0)
        tt.eliminate_zeros()
        tt.sort_indices()
        counts = np.diff(tt.indptr)
        K = int(counts.max())
        m = self.n_triangles
        idx = np.repeat(np.arange(m), K).reshape(m, K)
        mask = np.arange(K)[None, :] < counts[:, None]
        idx[mask] = tt.indices
        return idx, mask


@dataclass(frozen=True)
class Immersion:
    """Vertex positions in chart coordinates on a fixed topology."""

    vertices: np.ndarray
    topology: Topology
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) != self.topology.n_vertices:
            raise InvalidMesh("vertices must be (n, 3) matching the topology")
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("vertex coordinates must be finite")
        if self.t < 0:
            raise ValueError("time must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_arrays(cls, vertices, triangles, t=0.0):
        v = np.asarray(vertices, dtype=float)
        return cls(v, Topology(triangles, n_vertices=len(v)), float(t))

    @property
    def triangles(self) -> np.ndarray:
        return self.topology.triangles

    @property
    def n_vertices(self) -> int:
        return self.topology.n_vertices

    def with_vertices(self, vertices, t=None) -> "Immersion":
        return Immersion(vertices, self.topology, self.t if t is None else float(t))

    def reversed(self) -> "Immersion":
        """Same surface with every triangle winding flipped."""
        return Immersion.from_arrays(self.vertices, self.triangles[:, [0, 2, 1]], self.t)


@dataclass(frozen=True)
class InducedMetric:
    """Per-triangle pullback metric in the affine parametrisation.

    ``g[f]`` is the Gram matrix of the edge vectors ``v1 - v0`` and ``v2 - v0``
    in the ambient metric at the barycentre; ``dmu = sqrt(det g) / 2``.
    """

    g: np.ndarray
    dmu: np.ndarray
    edge_length: np.ndarray
    jacobian: np.ndarray = field(repr=False)
    barycenter: np.ndarray = field(repr=False)

    @property
    def total_area(self) -> float:
        return float(self.dmu.sum())


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("non-finite values in input")


def edge_lengths(im: Immersion, amb: AmbientSpace) -> np.ndarray:
    """Ambient length of each edge.

    Model spaces use the closed-form geodesic distance between the endpoints.
    Conformal ambients integrate the factor along the straight chart segment
    with Simpson's rule, which overestimates geodesic length at third order.
    """
    v = im.vertices
    e = im.topology.edges
    a, b = v[e[:, 0]], v[e[:, 1]]
    if amb.is_model:
        return amb.geodesic_distance(a, b, check=False)
    chord = np.linalg.norm(b - a, axis=1)
    lam = amb.conformal_factor(np.concatenate([a, 0.5 * (a + b), b]))
    la, lm, lb = np.split(lam, 3)
    return chord * (la + 4.0 * lm + lb) / 6.0


def induced_metric(im: Immersion, amb: AmbientSpace, area_floor=AREA_FLOOR) -> InducedMetric:
    v = amb.check_chart(im.vertices)
    t = im.triangles
    J = np.stack([v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]], axis=2)
    bary = v[t].mean(axis=1)
    lam2 = amb.conformal_factor(bary) ** 2
    g = lam2[:, None, None] * np.einsum("fai,faj->fij", J, J)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
    dmu = 0.5 * np.sqrt(np.maximum(det, 0.0))
    bad = np.flatnonzero(dmu <= area_floor)
    if bad.size:
        raise DegenerateTriangle(f"{bad.size} triangle(s) below area floor, first {bad[0]}")
    return InducedMetric(g, dmu, edge_lengths(im, amb), J, bary)


@dataclass(frozen=True)
class CotanOperator:
    """Stiffness matrix L (negative semidefinite) and mixed Voronoi areas."""

    L: sparse.csr_matrix
    dual_area: np.ndarray
    tri_area: np.ndarray
    cot: np.ndarray
    corner_sq: np.ndarray

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        _check_finite(u)
        return (self.L @ u) / (self.dual_area if u.ndim == 1 else self.dual_area[:, None])


def _corner_geometry(im, amb):
    """Squared opposite edge lengths, corner cotangents, angles and areas."""
    lengths = edge_lengths(im, amb)
    sq = lengths[im.topology.tri_edges] ** 2  # sq[f, c] is opposite corner c
    a, b, c = sq[:, 0], sq[:, 1], sq[:, 2]
    # Heron in the numerically stable squared-length form
    area = 0.25 * np.sqrt(np.maximum(4 * a * b - (a + b - c) ** 2, 0.0))
    if np.any(area <= AREA_FLOOR):
        bad = np.flatnonzero(area <= AREA_FLOOR)
        raise DegenerateTriangle(f"{bad.size} degenerate triangle(s), first {bad[0]}")
    cot = np.stack(
        [(b + c - a), (c + a - b), (a + b - c)], axis=1
    ) / (4.0 * area[:, None])
    return sq, cot, area


def cotan_operator(im: Immersion, amb: AmbientSpace) -> CotanOperator:
    amb.check_chart(im.vertices)
    t = im.triangles
    n = im.n_vertices
    sq, cot, area = _corner_geometry(im, amb)
    rows, cols, vals = [], [], []
    for c in range(3):
        i, j = t[:, (c + 1) % 3], t[:, (c + 2) % 3]
        w = 0.5 * cot[:, c]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [w, w, -w, -w]
    L = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    # mixed Voronoi areas
    obtuse = cot < 0
    any_obtuse = obtuse.any(axis=1)
    contrib = np.empty_like(cot)
    for c in range(3):
        j, k = (c + 1) % 3, (c + 2) % 3
        # edges adjacent to corner c are opposite corners k and j
        contrib[:, c] = (sq[:, k] * cot[:, k] + sq[:, j] * cot[:, j]) / 8.0
    contrib = np.where(
        any_obtuse[:, None],
        np.where(obtuse, area[:, None] / 2.0, area[:, None] / 4.0),
        contrib,
    )
    dual = np.bincount(t.ravel(), weights=contrib.ravel(), minlength=n)
    return CotanOperator(L, dual, area, cot, sq)


def laplace_beltrami(im: Immersion, amb: AmbientSpace, u, op: CotanOperator | None = None):
    """Cotangent Laplace-Beltrami of a per-vertex field, divided by dual area."""
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    if op is None:
        op = cotan_operator(im, amb)
    return op.apply(u)


def angle_defect(im: Immersion, amb: AmbientSpace, op: CotanOperator | None = None):
    """Discrete Gauss curvature: (2 pi - sum of corner angles) / dual area."""
    if op is None:
        op = cotan_operator(im, amb)
    angles = np.arctan2(1.0, op.cot)  # cot in (-inf, inf) -> angle in (0, pi)
    total = np.bincount(im.triangles.ravel(), weights=angles.ravel(), minlength=im.n_vertices)
    return (2.0 * np.pi - total) / op.dual_area


def face_normals(im: Immersion) -> np.ndarray:
    """Chart cross products of the edge vectors (area weighted, exterior)."""
    v = im.vertices
    t = im.triangles
    return 0.5 * np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])


def vertex_normal(im: Immersion, amb: AmbientSpace) -> np.ndarray:
    """Exterior unit normal at each vertex, unit in the ambient metric.

    Corner cross products are weighted by the inverse squared lengths of the
    two corner edges (Max's weights), which reproduce sphere normals exactly.
    """
    v = amb.check_chart(im.vertices)
    t = im.triangles
    e1 = v[np.roll(t, -1, axis=1)] - v[t]  # (m, 3 corners, 3)
    e2 = v[np.roll(t, -2, axis=1)] - v[t]
    cr = np.cross(e1, e2)
    if np.any(np.linalg.norm(cr, axis=2) <= AREA_FLOOR):
        raise DegenerateTriangle("zero-area triangle while computing normals")
    w = (cr / ((e1**2).sum(2) * (e2**2).sum(2))[:, :, None]).reshape(-1, 3)
    # triangle-major summation order, so reversing the winding negates exactly
    idx = t.ravel()
    acc = np.stack([np.bincount(idx, weights=w[:, k], minlength=im.n_vertices) for k in range(3)], axis=1)
    vn = acc / np.linalg.norm(acc, axis=1)[:, None]
    # conformal metrics: chart-orthogonal means metric-orthogonal
    return vn / amb.conformal_factor(v)[:, None]


@dataclass(frozen=True)
class Gradient:
    covector: np.ndarray  # (m, 2) components on the edge parameter basis
    vector: np.ndarray  # (m, 3) chart components of the tangent gradient
    norm: np.ndarray  # (m,)


def tangential_gradient(im: Immersion, amb: AmbientSpace, u, metric: InducedMetric | None = None):
    """Per-triangle gradient of the piecewise linear interpolant of u."""
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    if metric is None:
        metric = induced_metric(im, amb)
    t = im.triangles
    du = np.stack([u[t[:, 1]] - u[t[:, 0]], u[t[:, 2]] - u[t[:, 0]]], axis=1)
    ginv = np.linalg.inv(metric.g)
    up = np.einsum("fij,fj->fi", ginv, du)
    vec = np.einsum("fai,fi->fa", metric.jacobian, up)
    norm = np.sqrt(np.maximum(np.einsum("fi,fi->f", du, up), 0.0))
    return Gradient(du, vec, norm)


def _triangle_frames(im, amb, metric):
    """Chart-orthonormal tangent frames (m, 3, 2) and unit normals (m, 3)."""
    J = metric.jacobian
    e1 = J[:, :, 0] / np.linalg.norm(J[:, :, 0], axis=1)[:, None]
    n = np.cross(J[:, :, 0], J[:, :, 1])
    n /= np.linalg.norm(n, axis=1)[:, None]
    e2 = np.cross(n, e1)
    return np.stack([e1, e2], axis=2), n


def covariant_derivative(im: Immersion, amb: AmbientSpace, T, metric: InducedMetric | None = None):
    """Covariant derivative of a per-triangle symmetric 2-tensor.

    ``T[f]`` holds components on the edge parameter basis of triangle f.  For
    each triangle the neighbouring values are parallel transported (to first
    order, midpoint Christoffels) into its metric-orthonormal frame and a
    linear least-squares fit over the triangle one-ring gives the partial
    derivatives; Christoffel symbols of g come from the same fit applied to
    the neighbouring tangent projectors.  Returns ``(m, 2, 2, 2)`` components
    ``nabla_k T_ij`` on the parameter basis.
    """
    T = np.asarray(T, dtype=float)
    _check_finite(T)
    if metric is None:
        metric = induced_metric(im, amb)
    J = metric.jacobian
    bary = metric.barycenter
    lam = amb.conformal_factor(bary)
    F, nrm = _triangle_frames(im, amb, metric)
    # ambient (chart) bilinear form of T: T_amb = P^T T P, P = left inverse of J
    P = np.linalg.pinv(J)  # (m, 2, 3), chart-Euclidean pseudo-inverse
    T_amb = np.einsum("fia,fij,fjb->fab", P, T, P)
    proj = np.eye(3) - nrm[:, :, None] * nrm[:, None, :]
    g_amb = (lam**2)[:, None, None] * proj

    idx, mask = im.topology.triangle_neighbours
    m, K = idx.shape
    allidx = np.concatenate([np.arange(m)[:, None], idx], axis=1)
    allmask = np.concatenate([np.ones((m, 1), bool), mask], axis=1)
    dx = bary[allidx] - bary[:, None, :]  # (m, K+1, 3)
    frame = F / lam[:, None, None]  # metric-orthonormal basis vectors
    # transport frame vectors from f to each neighbour: X' = X - Gamma(dx, X)
    if amb.kind != "euclidean":
        G = amb.christoffel(0.5 * (bary[allidx] + bary[:, None, :]), check=False)
        X = frame[:, None, :, :] - np.einsum("fnkij,fni,fja->fnka", G, dx, frame)
    else:
        X = np.broadcast_to(frame[:, None, :, :], (m, K + 1, 3, 2))
    comp_T = np.einsum("fnka,fnkl,fnlb->fnab", X, T_amb[allidx], X)
    comp_g = np.einsum("fnka,fnkl,fnlb->fnab", X, g_amb[allidx], X)
    coords = np.einsum("fka,fnk->fna", F, dx) * lam[:, None, None]
    D = np.concatenate([np.ones((m, K + 1, 1)), coords], axis=2)
    w = allmask.astype(float)
    DtW = D * w[:, :, None]
    M = np.einsum("fni,fnj->fij", DtW, D)
    Minv = np.linalg.pinv(M)

    def fit(y):  # y: (m, K+1, 2, 2) -> partials (m, 2[k], 2, 2)
        rhs = np.einsum("fni,fnab->fiab", DtW, y)
        coef = np.einsum("fij,fjab->fiab", Minv, rhs)
        return coef[:, 1:]

    dT = fit(comp_T)
    dg = fit(comp_g)
    g0 = comp_g[:, 0]
    g0inv = np.linalg.inv(g0)
    # Gamma^m_ki = 1/2 g^ml (d_k g_il + d_i g_kl - d_l g_ki)
    low = 0.5 * (
        np.einsum("fkil->fkil", dg)
        + np.einsum("fikl->fkil", dg)
        - np.einsum("flki->fkil", dg)
    )
    Gam = np.einsum("fml,fkil->fmki", g0inv, low)
    T0 = comp_T[:, 0]
    nabla = (
        dT
        - np.einsum("fmki,fmj->fkij", Gam, T0)
        - np.einsum("fmkj,fim->fkij", Gam, T0)
    )
    # frame -> parameter basis: c[f, :, i] = frame coordinates of J[:, :, i]
    c = np.einsum("fka,fki->fai", F, J) * lam[:, None, None]
    return np.einsum("fpk,fai,fbj,fpab->fkij", c, c, c, nabla)


@dataclass(frozen=True)
class QualityReport:
    min_angle_deg: float
    max_aspect: float
    min_area: float
    edge_ratio: float

    def acceptable(self, min_angle_deg=5.0, max_aspect=25.0, max_edge_ratio=np.inf):
        return (
            self.min_angle_deg >= min_angle_deg
            and self.max_aspect <= max_aspect
            and self.edge_ratio <= max_edge_ratio
            and self.min_area > 0
        )


def quality_report(im: Immersion, amb: AmbientSpace) -> QualityReport:
    """Angle, aspect and size statistics in the ambient metric.

    Aspect is ``l_max * perimeter / (4 sqrt(3) area)``, equal to 1 for an
    equilateral triangle.
    """
    lengths = edge_lengths(im, amb)
    sq = lengths[im.topology.tri_edges] ** 2
    a, b, c = sq[:, 0], sq[:, 1], sq[:, 2]
    area = 0.25 * np.sqrt(np.maximum(4 * a * b - (a + b - c) ** 2, 0.0))
    cosines = np.stack(
        [(b + c - a) / (2 * np.sqrt(b * c)), (c + a - b) / (2 * np.sqrt(c * a)), (a + b - c) / (2 * np.sqrt(a * b))],
        axis=1,
    )
    angles = np.degrees(np.arccos(np.clip(cosines, -1.0, 1.0)))
    el = np.sqrt(sq)
    with np.errstate(divide="ignore"):
        aspect = el.max(axis=1) * el.sum(axis=1) / (4.0 * np.sqrt(3.0) * area)
    return QualityReport(
        min_angle_deg=float(angles.min()),
        max_aspect=float(np.max(aspect)),
        min_area=float(area.min()),
        edge_ratio=float(lengths.max() / lengths.min()),
    )
