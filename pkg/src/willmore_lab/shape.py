"""Second-order geometry of a triangulated surface.

The second fundamental form is estimated per vertex by fitting a height
function over the two-ring in ambient normal coordinates.  Signs follow the
convention that a round sphere with exterior normal has ``H = +2/r``: ``A`` is
measured against the interior normal, and the Willmore velocity is
``W * nu_ext``.

Frames are stored as chart vectors of unit Euclidean length.  Because every
ambient metric is conformally flat, the metric-unit frame is the chart frame
divided by the conformal factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .ambient import FD_STEP, AmbientSpace
from ._jetkernel import fit_all
from .errors import RankDeficientFit
from .mesh import CotanOperator, Immersion, angle_defect, cotan_operator, face_normals

JET_DEGREE = 4
JET_RING = 2
NORMAL_PASSES = 0
COND_LIMIT = 1e8


def _monomials(degree):
    return [(i, k - i) for k in range(1, degree + 1) for i in range(k, -1, -1)]


_MONOS = _monomials(JET_DEGREE)
_N_MONOS = {d: len(_monomials(d)) for d in range(1, JET_DEGREE + 1)}


def _normal_coordinates(im: Immersion, amb: AmbientSpace, idx):
    """Ambient normal coordinates of ring neighbours, chart-orthonormal axes.

    ``lambda(p) * log_p(q)`` has metric-unit length equal to the geodesic
    distance and is expressed on the Euclidean axes of the chart.
    """
    v = im.vertices
    if amb.kind == "euclidean":
        return v[idx] - v[:, None, :]
    P = np.broadcast_to(v[:, None, :], idx.shape + (3,))
    lam = amb.conformal_factor(v)
    return amb.log_map(P, v[idx]) * lam[:, None, None]


@dataclass(frozen=True)
class JetFit:
    """Per-vertex height-function fit in normal coordinates.

    ``frame[v]`` has chart-orthonormal columns ``(e1, e2, n_in)``;
    ``coef[v]`` are the polynomial coefficients of ``z/h`` in ``(x/h, y/h)``
    (zero-padded above the degree actually used); ``coords`` are the
    neighbour normal coordinates on that frame.
    """

    frame: np.ndarray
    coef: np.ndarray
    degree: np.ndarray
    scale: np.ndarray
    coords: np.ndarray
    idx: np.ndarray
    mask: np.ndarray

    def gradient(self):
        return self.coef[:, :2]

    def hessian(self):
        h = self.scale
        j20, j11, j02 = _MONOS.index((2, 0)), _MONOS.index((1, 1)), _MONOS.index((0, 2))
        c = self.coef
        return (
            np.stack(
                [np.stack([2 * c[:, j20], c[:, j11]], -1), np.stack([c[:, j11], 2 * c[:, j02]], -1)],
                -2,
            )
            / h[:, None, None]
        )

    def height_gradient_at(self, x, y):
        """Gradient of the fitted height at normal coordinates (x, y)."""
        h = self.scale[:, None]
        xs, ys = x / h, y / h
        gx = np.zeros_like(x)
        gy = np.zeros_like(x)
        for col, (i, j) in enumerate(_MONOS):
            c = self.coef[:, col : col + 1]
            if i:
                gx = gx + c * i * xs ** (i - 1) * ys**j
            if j:
                gy = gy + c * j * xs**i * ys ** (j - 1)
        return gx, gy


def fit_jets(im: Immersion, amb: AmbientSpace, degree=JET_DEGREE, ring=JET_RING) -> JetFit:
    """Weighted least-squares height fit around every vertex.

    Weights are inverse ambient distances.  The frame normal is refined
    ``NORMAL_PASSES`` times by tilting it to the fitted normal.  A vertex
    whose normal matrix has Cholesky pivot ratio (a condition estimate) above
    ``COND_LIMIT`` is refitted at the next lower degree; below degree 2 the
    fit raises :class:`RankDeficientFit`.
    """
    idx, mask, _ = im.topology.ring(ring)
    n = im.n_vertices
    d = _normal_coordinates(im, amb, idx)
    fn = face_normals(im)
    nin = -(im.topology.vertex_triangles @ fn)
    nin /= np.linalg.norm(nin, axis=1)[:, None]
    first = d[:, 0, :]
    e1 = first - np.einsum("ni,ni->n", first, nin)[:, None] * nin
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    E = np.stack([e1, np.cross(nin, e1), nin], axis=2)
    c = d @ E
    mons = _monomials(degree)
    pi = np.array([i for i, _ in mons], dtype=np.int64)
    pj = np.array([j for _, j in mons], dtype=np.int64)
    ncols = np.array([_N_MONOS[d] for d in range(degree, 1, -1)], dtype=np.int64)
    counts = mask.sum(1).astype(np.int64)
    R, coef, h, ncol, c = fit_all(
        np.ascontiguousarray(c), counts, pi, pj, ncols, NORMAL_PASSES, COND_LIMIT
    )
    bad = np.flatnonzero(ncol == 0)
    if bad.size:
        raise RankDeficientFit(
            f"{bad.size} vertex fit(s) rank deficient even at degree 2, first vertex {bad[0]}"
        )
    used = np.searchsorted([_N_MONOS[d] for d in range(1, JET_DEGREE + 1)], ncol) + 1
    E = E @ R
    ncoef = coef.shape[1]
    if ncoef < len(_MONOS):
        coef = np.concatenate([coef, np.zeros((n, len(_MONOS) - ncoef))], axis=1)
    return JetFit(E, coef, used, h, c, idx, mask)


@dataclass(frozen=True)
class SecondFundamentalForm:
    """Per-vertex A on a metric-orthonormal tangent frame.

    ``tangent[v]`` holds the chart-unit frame vectors as columns; ``nu`` is
    the exterior normal, unit in the ambient metric.
    """

    A: np.ndarray
    H: np.ndarray
    A_tf: np.ndarray
    nu: np.ndarray
    tangent: np.ndarray
    jet: JetFit = field(repr=False)


def _orthonormalize(jet: JetFit):
    a = jet.gradient()
    W = np.sqrt(1.0 + (a**2).sum(1))
    hess = jet.hessian() / W[:, None, None]
    g = np.eye(2) + a[:, :, None] * a[:, None, :]
    Linv = np.linalg.inv(np.linalg.cholesky(g))
    A = Linv @ hess @ Linv.transpose(0, 2, 1)
    A = 0.5 * (A + A.transpose(0, 2, 1))
    E = jet.frame
    t = E[:, :, :2] + E[:, :, 2:3] * a[:, None, :]  # graph tangents, chart coords
    tangent = t @ Linv.transpose(0, 2, 1)
    n_in = (E[:, :, 2] - np.einsum("nai,ni->na", E[:, :, :2], a)) / W[:, None]
    return A, tangent, n_in


def second_fundamental_form(im: Immersion, amb: AmbientSpace) -> SecondFundamentalForm:
    amb.check_chart(im.vertices)
    jet = fit_jets(im, amb)
    A, tangent, n_in = _orthonormalize(jet)
    H = A[:, 0, 0] + A[:, 1, 1]
    A_tf = A - 0.5 * H[:, None, None] * np.eye(2)
    nu = -n_in / amb.conformal_factor(im.vertices)[:, None]
    return SecondFundamentalForm(A, H, A_tf, nu, tangent, jet)


@dataclass(frozen=True)
class CurvatureDerivatives:
    """Covariant derivatives of A on the vertex orthonormal frame.

    ``nabla_A[v, k, i, j]`` is nabla_k A_ij and ``nabla2_A[v, l, k, i, j]`` is
    nabla_l nabla_k A_ij.  Second derivatives come from a quadratic fit and
    are low order.
    """

    A: np.ndarray
    nabla_A: np.ndarray
    nabla2_A: np.ndarray

    @property
    def grad_norm_sq(self):
        return (self.nabla_A**2).sum(axis=(1, 2, 3))

    @property
    def hess_norm_sq(self):
        return (self.nabla2_A**2).sum(axis=(1, 2, 3, 4))


@dataclass(frozen=True)
class ShapeState:
    """Geometric quantities of one immersion at one time."""

    immersion: Immersion = field(repr=False)
    ambient: AmbientSpace = field(repr=False)
    sff: SecondFundamentalForm = field(repr=False)
    op: CotanOperator = field(repr=False)
    W: np.ndarray = field(repr=False)
    energy: float = 0.0

    @property
    def A(self):
        return self.sff.A

    @property
    def H(self):
        return self.sff.H

    @property
    def A_tf(self):
        return self.sff.A_tf

    @property
    def nu(self):
        return self.sff.nu

    @property
    def dual_area(self):
        return self.op.dual_area

    @property
    def A_sq(self):
        return (self.sff.A**2).sum(axis=(1, 2))

    @property
    def A_tf_sq(self):
        return (self.sff.A_tf**2).sum(axis=(1, 2))

    @property
    def max_abs_A(self) -> float:
        return float(np.sqrt(self.A_sq.max()))

    @cached_property
    def derivatives(self) -> CurvatureDerivatives:
        return curvature_derivatives(self)

    @property
    def grad_A_sq(self):
        return self.derivatives.grad_norm_sq

    @property
    def hess_A_sq(self):
        return self.derivatives.hess_norm_sq


def willmore_energy(state: ShapeState) -> float:
    """One quarter of the integral of H^2 against the dual vertex areas."""
    return float(0.25 * np.dot(state.H**2, state.dual_area))


def willmore_operator(im: Immersion, amb: AmbientSpace, state, op: CotanOperator | None = None) -> np.ndarray:
    """``Delta H + H |A_tf|^2 + H Ric(nu, nu)`` at every vertex.

    ``state`` may be a :class:`ShapeState` or a :class:`SecondFundamentalForm`.
    """
    sff = state.sff if isinstance(state, ShapeState) else state
    if op is None:
        op = state.op if isinstance(state, ShapeState) else cotan_operator(im, amb)
    H = sff.H
    tf = (sff.A_tf**2).sum(axis=(1, 2))
    ric = amb.ricci_normal(im.vertices, sff.nu)
    return op.apply(H) + H * tf + H * ric


def shape_state(im: Immersion, amb: AmbientSpace) -> ShapeState:
    op = cotan_operator(im, amb)  # first, so degenerate triangles are named as such
    sff = second_fundamental_form(im, amb)
    W = willmore_operator(im, amb, sff, op)
    energy = float(0.25 * np.dot(sff.H**2, op.dual_area))
    return ShapeState(im, amb, sff, op, W, energy)


# --------------------------------------------------------------- derivatives
def _chart_map_jacobian(amb, im, jet, c):
    """Jacobian of normal coordinates -> chart at each ring point, (n, K, 3, 3)."""
    n, K, _ = c.shape
    lam = amb.conformal_factor(im.vertices)
    E = jet.frame
    if amb.kind == "euclidean":
        return np.broadcast_to(E[:, None, :, :], (n, K, 3, 3))
    P = np.broadcast_to(im.vertices[:, None, :], (n, K, 3))
    step = FD_STEP * jet.scale[:, None, None]
    cols = []
    for a in range(3):
        dc = np.zeros(3)
        dc[a] = 1.0
        plus = amb.exp_map(P, np.einsum("nij,nkj->nki", E, c + step * dc) / lam[:, None, None])
        minus = amb.exp_map(P, np.einsum("nij,nkj->nki", E, c - step * dc) / lam[:, None, None])
        cols.append((plus - minus) / (2 * step))
    return np.stack(cols, axis=-1)


def _quadratic_fit(xs, ys, w, values):
    """Fit values (n, K, ...) by quadratics in scaled coords; returns coefficients."""
    D = np.stack([np.ones_like(xs), xs, ys, xs * xs, xs * ys, ys * ys], axis=-1)
    Dw = D * w[..., None]
    N = np.matmul(Dw.transpose(0, 2, 1), D)
    flat = values.reshape(values.shape[0], values.shape[1], -1)
    rhs = np.matmul(Dw.transpose(0, 2, 1), flat)
    coef = np.linalg.solve(N, rhs)
    return coef.reshape((values.shape[0], 6) + values.shape[2:])


def curvature_derivatives(state: ShapeState) -> CurvatureDerivatives:
    """nabla A and nabla nabla A from fits of the A and g fields over the two-ring.

    Around each vertex the surface is the graph of its jet in normal
    coordinates ``(x, y)``.  At every ring vertex q the tangent vectors of
    that graph are pushed to the chart, where the neighbouring estimate of A
    and the ambient metric give the components ``A_ij(q)`` and ``g_ij(q)``.
    Quadratic fits of those fields supply partial derivatives, and the
    Christoffel symbols of the fitted metric turn them into covariant ones.
    """
    im, amb, sff = state.immersion, state.ambient, state.sff
    jet = sff.jet
    n = im.n_vertices
    idx = np.concatenate([np.arange(n)[:, None], jet.idx], axis=1)
    mask = np.concatenate([np.ones((n, 1), bool), jet.mask], axis=1)
    c = np.concatenate([np.zeros((n, 1, 3)), jet.coords], axis=1)
    x, y = c[..., 0], c[..., 1]
    gx, gy = jet.height_gradient_at(x, y)
    t_nc = np.zeros(c.shape + (2,))  # graph tangents in normal coordinates
    t_nc[..., 0, 0] = 1.0
    t_nc[..., 1, 1] = 1.0
    t_nc[..., 2, 0] = gx
    t_nc[..., 2, 1] = gy
    J = _chart_map_jacobian(amb, im, jet, c)
    T = np.einsum("nkab,nkbi->nkai", J, t_nc)  # chart vectors (n, K, 3, 2)
    lam_q = amb.conformal_factor(im.vertices)[idx]
    g_q = lam_q[..., None, None] ** 2 * np.einsum("nkai,nkaj->nkij", T, T)
    proj = np.einsum("nkai,nkab->nkib", T, sff.tangent[idx]) * lam_q[..., None, None]
    A_q = np.einsum("nkia,nkab,nkjb->nkij", proj, sff.A[idx], proj)

    h = jet.scale
    r = np.sqrt((c**2).sum(-1)) / h[:, None]
    w = np.where(mask, 1.0 / np.maximum(r, 0.5), 0.0)
    xs, ys = x / h[:, None], y / h[:, None]
    cA = _quadratic_fit(xs, ys, w, A_q)
    cg = _quadratic_fit(xs, ys, w, g_q)

    def partials(cf):
        inv_h = 1.0 / h
        val = cf[:, 0]
        d1 = np.stack([cf[:, 1], cf[:, 2]], axis=1) * inv_h[(slice(None),) + (None,) * (cf.ndim - 1)]
        d2 = np.stack(
            [np.stack([2 * cf[:, 3], cf[:, 4]], 1), np.stack([cf[:, 4], 2 * cf[:, 5]], 1)], 1
        ) * (inv_h**2)[(slice(None),) + (None,) * cf.ndim]
        return val, d1, d2

    A0, dA, ddA = partials(cA)  # dA[n, k, i, j], ddA[n, l, k, i, j]
    g0, dg, ddg = partials(cg)
    gi = np.linalg.inv(g0)
    # Gamma^m_ki = 1/2 g^ml (d_k g_il + d_i g_kl - d_l g_ki)
    low = 0.5 * (
        np.einsum("nkil->nkil", dg) + np.einsum("nikl->nkil", dg) - np.einsum("nlki->nkil", dg)
    )
    G = np.einsum("nml,nkil->nmki", gi, low)
    dlow = 0.5 * (
        np.einsum("npkil->npkil", ddg) + np.einsum("npikl->npkil", ddg) - np.einsum("nplki->npkil", ddg)
    )
    dgi = -np.einsum("nma,npab,nbl->npml", gi, dg, gi)
    dG = np.einsum("npml,nkil->npmki", dgi, low) + np.einsum("nml,npkil->npmki", gi, dlow)

    nA = dA - np.einsum("nmki,nmj->nkij", G, A0) - np.einsum("nmkj,nim->nkij", G, A0)
    # d_l (nabla_k A_ij)
    d_nA = (
        ddA
        - np.einsum("nlmki,nmj->nlkij", dG, A0)
        - np.einsum("nmki,nlmj->nlkij", G, dA)
        - np.einsum("nlmkj,nim->nlkij", dG, A0)
        - np.einsum("nmkj,nlim->nlkij", G, dA)
    )
    n2A = (
        d_nA
        - np.einsum("nmlk,nmij->nlkij", G, nA)
        - np.einsum("nmli,nkmj->nlkij", G, nA)
        - np.einsum("nmlj,nkim->nlkij", G, nA)
    )
    # coordinate components -> orthonormal components (g0 = L L^T)
    Li = np.linalg.inv(np.linalg.cholesky(g0))
    A_on = np.einsum("nai,nbj,nij->nab", Li, Li, A0)
    nA_on = np.einsum("nck,nai,nbj,nkij->ncab", Li, Li, Li, nA)
    n2A_on = np.einsum("ndl,nck,nai,nbj,nlkij->ndcab", Li, Li, Li, Li, n2A)
    return CurvatureDerivatives(A_on, nA_on, n2A_on)


# ------------------------------------------------------------ residual checks
def _ambient_frame(state, deriv=None):
    """Metric-unit frame (e1, e2, nu_in) as chart vectors, (n, 3, 3)."""
    sff = state.sff
    lam = state.ambient.conformal_factor(state.immersion.vertices)
    tan = sff.tangent / lam[:, None, None]
    return np.concatenate([tan, -sff.nu[:, :, None]], axis=2)


def _riemann_frame(state):
    """Ambient Riemann tensor on the (e1, e2, nu_in) frame; index 2 is nu."""
    amb = state.ambient
    p = state.immersion.vertices
    F = _ambient_frame(state)
    if amb.kind == "euclidean":
        return np.zeros((len(p), 3, 3, 3, 3))
    R = amb.riemann(p)
    return np.einsum("nabcd,nai,nbj,nck,ndl->nijkl", R, F, F, F, F)


def _nabla_riemann_frame(state):
    """Ambient covariant derivative of Riemann on the frame; index 0 differentiates."""
    amb = state.ambient
    p = state.immersion.vertices
    n = len(p)
    if amb.is_model:
        return np.zeros((n, 3, 3, 3, 3, 3))
    h = FD_STEP
    dR = []
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        dR.append((amb.riemann(p + e) - amb.riemann(p - e)) / (2 * h))
    dR = np.stack(dR, axis=1)  # [n, a, b, c, d, e]
    G = amb.christoffel(p)
    R = amb.riemann(p)
    nR = (
        dR
        - np.einsum("nmab,nmcde->nabcde", G, R)
        - np.einsum("nmac,nbmde->nabcde", G, R)
        - np.einsum("nmad,nbcme->nabcde", G, R)
        - np.einsum("nmae,nbcdm->nabcde", G, R)
    )
    F = _ambient_frame(state)
    return np.einsum("nabcde,nai,nbj,nck,ndl,nem->nijklm", nR, F, F, F, F, F)


def simons_ambient_terms(state, A=None):
    """Ambient curvature contribution to the Laplacian of A, per vertex (n, 2, 2).

    ``sum_q nablaR(e_q; nu, e_i, e_j, e_q) + sum_q nablaR(e_i; nu, e_q, e_q, e_j)
    + sum R(e_i, e_q, e_q, e_r) A_rj + sum R(e_i, e_q, e_j, e_r) A_qr``.
    Identically zero in Euclidean space; ``kappa (2A - H g)`` in space forms.
    """
    amb = state.ambient
    A = state.A if A is None else A
    n = len(A)
    if amb.kind == "euclidean":
        return np.zeros((n, 2, 2))
    if amb.is_model:
        H = A[:, 0, 0] + A[:, 1, 1]
        return amb.curvature * (2 * A - H[:, None, None] * np.eye(2))
    R = _riemann_frame(state)[:, :2, :2, :2, :2]
    nR = _nabla_riemann_frame(state)
    t1 = np.einsum("nqijq->nij", nR[:, :2, 2, :2, :2, :2])
    t2 = np.einsum("niqqj->nij", nR[:, :2, 2, :2, :2, :2])
    t3 = np.einsum("niqqr,nrj->nij", R, A)
    t4 = np.einsum("niqjr,nqr->nij", R, A)
    return t1 + t2 + t3 + t4


def simons_residual(im: Immersion, amb: AmbientSpace, state: ShapeState) -> np.ndarray:
    """Pointwise norm of the defect in the Laplacian identity for A."""
    d = state.derivatives
    A = d.A
    H = A[:, 0, 0] + A[:, 1, 1]
    lap = np.einsum("nllij->nij", d.nabla2_A)
    hessH = np.einsum("nijkk->nij", d.nabla2_A)
    cubic = H[:, None, None] * (A @ A) - (A**2).sum(axis=(1, 2))[:, None, None] * A
    res = lap - hessH - cubic - simons_ambient_terms(state, A)
    return np.sqrt((res**2).sum(axis=(1, 2)))


@dataclass(frozen=True)
class IdentityResiduals:
    gauss: np.ndarray
    codazzi: np.ndarray


def gauss_codazzi_residuals(im: Immersion, amb: AmbientSpace, state: ShapeState) -> IdentityResiduals:
    """Defects of the Gauss and Codazzi equations per vertex."""
    p = im.vertices
    K = angle_defect(im, amb, state.op)
    if amb.kind == "euclidean":
        sc = np.zeros(len(p))
    elif amb.is_model:
        sc = np.full(len(p), 6.0 * amb.curvature)
    else:
        sc = amb.scalar(p)
    ric = amb.ricci_normal(p, state.nu)
    gauss = np.abs(2 * K - (sc - 2 * ric + state.H**2 - state.A_sq))
    nA = state.derivatives.nabla_A
    if amb.is_model:
        amb_term = np.zeros_like(nA)
    else:
        # R(nu_in, e_i, e_j, e_k)
        amb_term = _riemann_frame(state)[:, 2, :2, :2, :2]
    res = nA - nA.transpose(0, 2, 1, 3) - amb_term
    codazzi = np.sqrt((res**2).sum(axis=(1, 2, 3)))
    return IdentityResiduals(gauss, codazzi)


def field_columns(state: ShapeState, extra: dict | None = None) -> dict:
    """Per-vertex scalar fields keyed by column name, for CSV export."""
    cols = {
        "vertex": np.arange(state.immersion.n_vertices),
        "H": state.H,
        "A_sq": state.A_sq,
        "A_tf_sq": state.A_tf_sq,
        "W": state.W,
        "dual_area": state.dual_area,
    }
    for k, v in (extra or {}).items():
        cols[k] = np.asarray(v)
    return cols
