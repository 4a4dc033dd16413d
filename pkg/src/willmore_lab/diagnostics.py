"""Monitored functionals and inequality checks along a flow.

Ball integrals use the discrete measure ``sum_v f(v) * dual_area(v)`` and a
sharp indicator ``d_N(f(v), x) < rho``; a smooth variant weights vertices by
``gamma**4`` of the quintic cutoff instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ambient import AmbientSpace
from .errors import (
    BadParams,
    ConnectivityChanged,
    InsufficientData,
    NonNegativityViolated,
    RadiusExceedsInjectivity,
)
from .mesh import Immersion, induced_metric, tangential_gradient
from .shape import ShapeState, _quadratic_fit, shape_state

HS_CONSTANT = 4.5 * math.sqrt(math.pi)
HS_SLACK = 0.05
DEFAULT_EPS0 = 1e-2

# sup |phi'| and sup |phi''| of the quintic cutoff profile
PROFILE_D1 = 3.75
PROFILE_D2 = 40.0 / math.sqrt(3.0)

_CHUNK = 4_000_000


# ----------------------------------------------------------------- distances
def ambient_distances(amb: AmbientSpace, centers, points) -> np.ndarray:
    """Matrix of ambient distances, shape (len(centers), len(points)).

    Model spaces use the closed form.  Conformal ambients use the Simpson
    length of the straight chart segment, an upper bound on the geodesic
    distance that avoids a geodesic solve per pair.
    """
    c = np.asarray(centers, dtype=float)[:, None, :]
    p = np.asarray(points, dtype=float)[None, :, :]
    if amb.is_model:
        return amb.geodesic_distance(c, p, check=False)
    c, p = np.broadcast_arrays(c, p)
    chord = np.linalg.norm(p - c, axis=-1)
    lam = amb.conformal_factor(np.stack([c, 0.5 * (c + p), p]))
    return chord * (lam[0] + 4.0 * lam[1] + lam[2]) / 6.0


def _check_radius(amb, rho):
    if not (rho > 0 and math.isfinite(rho)):
        raise BadParams(f"radius must be positive and finite, got {rho!r}")
    if rho >= amb.inj_radius:
        raise RadiusExceedsInjectivity(
            f"radius {rho} is not below the injectivity radius {amb.inj_radius}"
        )


# -------------------------------------------------------------------- cutoff
def profile(s) -> np.ndarray:
    """Quintic bump: 1 on [0, 1/2], 0 on [1, inf), C^2 in between."""
    s = np.asarray(s, dtype=float)
    u = np.clip(2.0 * s - 1.0, 0.0, 1.0)
    # rounding near u = 1 can dip below zero; the cutoff feeds nonnegative checks
    return np.clip(1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u * u), 0.0, 1.0)


def _distance_hessian_bound(amb: AmbientSpace, s: float) -> float:
    """Upper bound on the ambient Hessian of d(., x) at distance s (comparison)."""
    k2 = max(0.0, -amb.sect_inf)
    if k2 == 0.0:
        return 1.0 / s
    k = math.sqrt(k2)
    return k / math.tanh(k * s)


def cutoff_constant(amb: AmbientSpace, rho: float) -> float:
    """c_gamma with |grad gamma| <= c_gamma and |Hess gamma| <= c_gamma (c_gamma + |A|)."""
    hd = _distance_hessian_bound(amb, 0.5 * rho)
    return max(PROFILE_D1, math.sqrt(PROFILE_D2 + PROFILE_D1 * rho * hd)) / rho


def vertex_derivatives(state: ShapeState, f) -> tuple[np.ndarray, np.ndarray]:
    """Gradient (n, 2) and covariant Hessian (n, 2, 2) of a vertex field.

    Quadratic fit over the two-ring in the jet's graph coordinates; results
    are on the orthonormal tangent frame of the second fundamental form.
    """
    f = np.asarray(f, dtype=float)
    jet = state.sff.jet
    n = len(f)
    idx = np.concatenate([np.arange(n)[:, None], jet.idx], axis=1)
    mask = np.concatenate([np.ones((n, 1), bool), jet.mask], axis=1)
    c = np.concatenate([np.zeros((n, 1, 3)), jet.coords], axis=1)
    h = jet.scale
    r = np.sqrt((c**2).sum(-1)) / h[:, None]
    w = np.where(mask, 1.0 / np.maximum(r, 0.5), 0.0)
    cf = _quadratic_fit(c[..., 0] / h[:, None], c[..., 1] / h[:, None], w, f[idx])
    grad = np.stack([cf[:, 1], cf[:, 2]], axis=1) / h[:, None]
    hess = np.stack(
        [np.stack([2 * cf[:, 3], cf[:, 4]], -1), np.stack([cf[:, 4], 2 * cf[:, 5]], -1)], -2
    ) / (h**2)[:, None, None]
    a = jet.gradient()
    U = jet.hessian()
    g = np.eye(2) + a[:, :, None] * a[:, None, :]
    gi = np.linalg.inv(g)
    # Gamma^k_ij = g^kl u_l u_ij for a graph over flat normal coordinates
    Gk = np.einsum("nkl,nl->nk", gi, a)
    hess = hess - np.einsum("nk,nk->n", Gk, grad)[:, None, None] * U
    Linv = np.linalg.inv(np.linalg.cholesky(g))
    return np.einsum("nai,ni->na", Linv, grad), Linv @ hess @ Linv.transpose(0, 2, 1)


@dataclass(frozen=True)
class CutoffReport:
    gamma: np.ndarray
    grad_max: float
    grad_bound: float
    hess_excess: float
    c_gamma: float
    h_max: float

    @property
    def ok(self) -> bool:
        return self.grad_max <= self.grad_bound


@dataclass(frozen=True)
class CutoffFunction:
    """``gamma = phi(d_N(f, center) / rho)`` with the quintic profile."""

    center: np.ndarray
    rho: float
    ambient: AmbientSpace = field(repr=False)

    def __post_init__(self):
        _check_radius(self.ambient, self.rho)
        c = np.asarray(self.center, dtype=float).reshape(3)
        self.ambient.check_chart(c)
        object.__setattr__(self, "center", c)

    @property
    def c_gamma(self) -> float:
        return cutoff_constant(self.ambient, self.rho)

    def values(self, points) -> np.ndarray:
        d = ambient_distances(self.ambient, self.center[None], points)[0]
        return profile(d / self.rho)

    def __call__(self, im: Immersion) -> np.ndarray:
        return self.values(im.vertices)

    def check(self, state: ShapeState, slack: float = 2.0) -> CutoffReport:
        """Discrete bounds: PL gradient against ``4/rho (1 + slack h/rho)``,
        fitted Hessian against ``c_gamma (c_gamma + |A|)`` (excess reported)."""
        im, amb = state.immersion, state.ambient
        gam = self(im)
        metric = induced_metric(im, amb)
        grad = tangential_gradient(im, amb, gam, metric)
        h = float(metric.edge_length.max())
        _, hess = vertex_derivatives(state, gam)
        hn = np.sqrt((hess**2).sum(axis=(1, 2)))
        cg = self.c_gamma
        excess = hn - cg * (cg + np.sqrt(state.A_sq))
        return CutoffReport(
            gamma=gam,
            grad_max=float(grad.norm.max()),
            grad_bound=4.0 / self.rho * (1.0 + slack * h / self.rho),
            hess_excess=float(max(0.0, excess.max())),
            c_gamma=cg,
            h_max=h,
        )


# -------------------------------------------------------------- concentration
def hs_conditions(amb: AmbientSpace, support_area: float) -> tuple[bool, bool]:
    """Ambient curvature and injectivity-radius hypotheses of the Sobolev inequality.

    The Ricci supremum is bounded by twice the sectional supremum.
    """
    K = 2.0 * amb.sect_sup
    a = float(support_area)
    if a <= 0:
        return True, True
    curv_ok = K <= 8.0 * math.pi / (9.0 * a)
    if K > 0:
        arg = math.sqrt(9.0 * K * a / (4.0 * math.pi))
        inj_ok = arg <= 1.0 and amb.inj_radius >= math.asin(arg) / (2.0 * math.sqrt(K))
    else:
        inj_ok = amb.inj_radius >= 0.75 * math.sqrt(a / math.pi)
    return bool(curv_ok), bool(inj_ok)


@dataclass(frozen=True)
class ConcentrationReport:
    """Ball integrals of |A|^2 and area over a set of centers."""

    t: float
    rho: float
    eta: float
    center: np.ndarray
    centers: np.ndarray = field(repr=False)
    eps: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    eps_smooth: np.ndarray = field(repr=False)
    rho_of_t: Optional[float] = None
    sobolev_ok: bool = True

    @property
    def eta_smooth(self) -> float:
        return float(self.eps_smooth.max())

    @property
    def area_max(self) -> float:
        return float(self.sigma.max())


def _ball_sums(amb, centers, points, weights, radii, smooth=False):
    """For every radius, per-center sums of ``weights`` (columns) inside the ball."""
    centers = np.asarray(centers, dtype=float)
    n = len(points)
    radii = list(radii)
    out = np.zeros((len(radii), len(centers), weights.shape[1]))
    sm = np.zeros_like(out) if smooth else None
    step = max(1, _CHUNK // max(n, 1))
    for s in range(0, len(centers), step):
        d = ambient_distances(amb, centers[s : s + step], points)
        for i, r in enumerate(radii):
            out[i, s : s + step] = (d < r).astype(float) @ weights
            if smooth:
                sm[i, s : s + step] = profile(d / r) ** 4 @ weights
    return out, sm


def refinement_centers(amb: AmbientSpace, x, spacing: float, n: int = 5) -> np.ndarray:
    """Chart points on an n^3 grid of the given spacing in normal coordinates at x."""
    x = np.asarray(x, dtype=float)
    ax = (np.arange(n) - (n - 1) / 2) * spacing
    off = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    lam = amb.conformal_factor(x)
    pts = amb.exp_map(np.broadcast_to(x, off.shape), off / lam)
    return pts[amb.in_chart(pts)]


REFINE_PASSES = 12


def _refine(amb, x, best, pts, w, rho, smooth=False):
    """Local pattern search for the ball-integral maximizer starting at x.

    Each pass evaluates a 5^3 grid around the current center; the center
    moves on improvement and the spacing halves otherwise.  Returns every
    evaluated center with its sums.
    """
    spacing = rho / 8.0
    cs, ss, ms = [], [], []
    for _ in range(REFINE_PASSES):
        cand = refinement_centers(amb, x, spacing)
        s, m = _ball_sums(amb, cand, pts, w, [rho], smooth=smooth)
        cs.append(cand)
        ss.append(s[0])
        if smooth:
            ms.append(m[0])
        i = int(np.argmax(s[0, :, 0]))
        if s[0, i, 0] > best:
            best, x = s[0, i, 0], cand[i]
        else:
            spacing *= 0.5
            if spacing < rho / 128.0:
                break
    return np.concatenate(cs), np.concatenate(ss), (np.concatenate(ms) if smooth else None)


def concentration(
    state: ShapeState,
    amb: AmbientSpace,
    rho: float,
    centers=None,
    refine: bool = True,
    eps0: Optional[float] = None,
    radius_grid: Optional[Sequence[float]] = None,
) -> ConcentrationReport:
    """Supremum over centers of the |A|^2 integral on preimages of rho-balls.

    Centers default to the vertex images, followed by a local pattern search
    around the best vertex (centers off the surface included).  With ``eps0`` and ``radius_grid`` the report
    also carries :func:`rho_of_t`.
    """
    _check_radius(amb, rho)
    pts = state.immersion.vertices
    w = np.stack([state.A_sq * state.dual_area, state.dual_area], axis=1)
    C = pts if centers is None else amb.check_chart(np.atleast_2d(centers))
    sums, sm = _ball_sums(amb, C, pts, w, [rho], smooth=True)
    eps, sigma, eps_s = sums[0, :, 0], sums[0, :, 1], sm[0, :, 0]
    if refine:
        i0 = int(np.argmax(eps))
        extra, s2, m2 = _refine(amb, C[i0], eps[i0], pts, w, rho, smooth=True)
        C = np.concatenate([C, extra])
        eps = np.concatenate([eps, s2[:, 0]])
        sigma = np.concatenate([sigma, s2[:, 1]])
        eps_s = np.concatenate([eps_s, m2[:, 0]])
    best = int(np.argmax(eps))
    r_t = None
    if eps0 is not None and radius_grid is not None:
        r_t = rho_of_t(state, amb, eps0, radius_grid)
    curv_ok, inj_ok = hs_conditions(amb, float(sigma.max()))
    return ConcentrationReport(
        t=state.immersion.t,
        rho=float(rho),
        eta=float(eps[best]),
        center=C[best].copy(),
        centers=C,
        eps=eps,
        sigma=sigma,
        eps_smooth=eps_s,
        rho_of_t=r_t,
        sobolev_ok=curv_ok and inj_ok,
    )


def eta_profile(state: ShapeState, amb: AmbientSpace, radius_grid) -> np.ndarray:
    """eta at every grid radius (vertex centers plus a local search per radius)."""
    grid = [float(r) for r in radius_grid]
    for r in grid:
        _check_radius(amb, r)
    pts = state.immersion.vertices
    w = (state.A_sq * state.dual_area)[:, None]
    sums, _ = _ball_sums(amb, pts, pts, w, grid)
    eta = sums[:, :, 0].max(axis=1)
    for i, r in enumerate(grid):
        i0 = int(np.argmax(sums[i, :, 0]))
        _, s2, _ = _refine(amb, pts[i0], eta[i], pts, w, r)
        eta[i] = max(eta[i], s2[:, 0].max())
    return eta


def rho_of_t(state: ShapeState, amb: AmbientSpace, eps0: float, radius_grid) -> float:
    """Largest grid radius whose eta is at most eps0; 0 when none qualifies."""
    if not eps0 >= 0:
        raise BadParams("eps0 must be nonnegative")
    grid = np.asarray(radius_grid, dtype=float)
    if grid.size == 0:
        raise BadParams("radius grid is empty")
    eta = eta_profile(state, amb, grid)
    ok = grid[eta <= eps0]
    return float(ok.max()) if ok.size else 0.0


# ------------------------------------------------------------------- covering
@dataclass(frozen=True)
class CoveringResult:
    ok: bool
    slack: float
    eta: float
    half_sup: float
    c_eta: int


def covering_check(
    state: ShapeState, amb: AmbientSpace, rho: float, report: Optional[ConcentrationReport] = None
) -> CoveringResult:
    """``eta <= c_eta * sup_x eps_{rho/2}(x)`` with the slack ratio of both sides.

    The half-radius supremum includes the explicit cover of the maximizing
    rho-ball, so the inequality holds exactly for the discrete measure.
    """
    rep = report if report is not None and report.rho == rho else concentration(state, amb, rho)
    c_eta = amb.covering_constant(rho)
    pts = state.immersion.vertices
    w = (state.A_sq * state.dual_area)[:, None]
    cover = amb.covering_points(rep.center, rho)
    cover = cover[amb.in_chart(cover)]
    cands = np.concatenate([pts, cover])
    sums, _ = _ball_sums(amb, cands, pts, w, [0.5 * rho])
    half = float(sums[0, :, 0].max())
    bound = c_eta * half
    slack = math.inf if rep.eta == 0 else bound / rep.eta
    return CoveringResult(rep.eta <= bound * (1 + 1e-12), slack, rep.eta, half, c_eta)


# -------------------------------------------------------------- Sobolev checks
@dataclass(frozen=True)
class HoffmanSpruckReport:
    lhs: float
    rhs: float
    ok: bool
    conditions_ok: bool
    support_area: float
    constant: float


def hoffman_spruck_check(
    state: ShapeState,
    amb: AmbientSpace,
    u,
    constant: float = HS_CONSTANT,
    slack: float = HS_SLACK,
) -> HoffmanSpruckReport:
    """``(int u^2)^(1/2) <= constant * int |grad u| + |u| |H|`` for u >= 0.

    ``|grad u|`` is the piecewise linear gradient integrated over triangles;
    the other integrals use dual vertex areas.  The support area is the area
    of all triangles touching a vertex where u is positive.
    """
    im = state.immersion
    u = np.asarray(u, dtype=float)
    if u.shape != (im.n_vertices,):
        raise BadParams("u needs one value per vertex")
    if not np.all(np.isfinite(u)):
        raise BadParams("u must be finite")
    if np.any(u < 0):
        raise NonNegativityViolated(f"u has {int((u < 0).sum())} negative value(s)")
    A = state.dual_area
    metric = induced_metric(im, amb)
    grad = tangential_gradient(im, amb, u, metric)
    lhs = math.sqrt(float(np.dot(u * u, A)))
    rhs = constant * (float(np.dot(grad.norm, metric.dmu)) + float(np.dot(u * np.abs(state.H), A)))
    pos = (u > 0)[im.triangles].any(axis=1)
    area = float(metric.dmu[pos].sum())
    curv_ok, inj_ok = hs_conditions(amb, area)
    return HoffmanSpruckReport(lhs, rhs, lhs <= rhs * (1.0 + slack), curv_ok and inj_ok, area, constant)


@dataclass(frozen=True)
class MultiplicativeSobolevReport:
    lhs: float
    mass: float
    weighted: float
    c_gamma: float
    constant: float
    c_min: float

    @property
    def rhs(self) -> float:
        return self.constant * (self.mass * self.weighted + self.c_gamma**4 * self.mass**2)

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def cutoff_term(self) -> float:
        return self.c_gamma**4 * self.mass**2


def multiplicative_sobolev_check(
    state: ShapeState, amb: AmbientSpace, gamma: CutoffFunction, s: float = 4.0, constant: float = 1.0
) -> MultiplicativeSobolevReport:
    """Both sides of the multiplicative Sobolev inequality and the smallest constant."""
    if s < 4:
        raise BadParams("exponent s must be at least 4")
    A = state.dual_area
    g = gamma(state.immersion)
    gs = g**s
    a2 = state.A_sq
    d = state.derivatives
    lhs = float(np.dot((d.grad_norm_sq * a2 + a2**3) * gs, A))
    mass = float(np.dot(a2 * (g > 0), A))
    weighted = float(np.dot((d.hess_norm_sq + a2**3) * gs, A))
    cg = gamma.c_gamma
    denom = mass * weighted + cg**4 * mass**2
    c_min = lhs / denom if denom > 0 else (0.0 if lhs == 0 else math.inf)
    return MultiplicativeSobolevReport(lhs, mass, weighted, cg, float(constant), c_min)


def monitored_integrals(state: ShapeState, gamma: CutoffFunction, s: float = 4.0) -> dict:
    """Localised curvature integrals tracked along a trajectory."""
    A = state.dual_area
    g = gamma(state.immersion)
    gs = g**s
    d = state.derivatives
    a2 = state.A_sq
    return {
        "A2": float(np.dot(a2 * gs, A)),
        "gradA2": float(np.dot(d.grad_norm_sq * gs, A)),
        "hessA2": float(np.dot(d.hess_norm_sq * gs, A)),
        "A6": float(np.dot(a2**3 * gs, A)),
        "support_area": float(A[g > 0].sum()),
    }


# ------------------------------------------------------- evolution equations
@dataclass(frozen=True)
class QuantityResidual:
    """Residual of one evolution equation split into time and space parts.

    ``time`` compares the central difference with the exact derivative of the
    discrete quantity along the middle velocity; ``space`` compares that
    derivative with the continuum right side.  All norms are area-weighted L2
    norms, ``rel_*`` divided by the norm of the right side.
    """

    name: str
    l2: float
    max: float
    rel_l2: float
    rel_max: float
    time_l2: float
    space_l2: float


@dataclass(frozen=True)
class EvolutionReport:
    dt: float
    h: float
    quantities: dict

    def __getitem__(self, key) -> QuantityResidual:
        return self.quantities[key]


def _param_frame(state: ShapeState, J):
    """P[f, c, a, i] = <e_a(v_c), J_i(f)> for the three corners of each triangle."""
    im = state.immersion
    t = im.triangles
    lam = state.ambient.conformal_factor(im.vertices)
    tan = state.sff.tangent[t]  # (m, 3, 3[x], 2[a])
    return np.einsum("fcxa,fxi->fcai", tan, J) * lam[t][:, :, None, None]


def _to_param(P, T):
    """Vertex tensors T[f, c] (orthonormal frame) to the triangle parameter basis, corner mean."""
    return np.einsum("fcai,fcab,fcbj->fij", P, T, P) / 3.0


def _triangle_A(state: ShapeState):
    m = induced_metric(state.immersion, state.ambient)
    P = _param_frame(state, m.jacobian)
    return _to_param(P, state.A[state.immersion.triangles])


def _tensor_norm(g, T):
    gi = np.linalg.inv(g)
    return np.sqrt(np.maximum(np.einsum("fij,fjk,fkl,fli->f", gi, T, gi, T), 0.0))


def _norms(name, total, time, space, rhs, w):
    tot_w = float(w.sum())
    l2 = lambda r: math.sqrt(float(np.dot(r * r, w)) / tot_w)
    ref_l2 = l2(rhs)
    ref_max = float(np.abs(rhs).max())
    l2_tot, mx = l2(total), float(np.abs(total).max())
    return QuantityResidual(
        name,
        l2_tot,
        mx,
        l2_tot / ref_l2 if ref_l2 > 0 else math.inf,
        mx / ref_max if ref_max > 0 else math.inf,
        l2(time),
        l2(space),
    )


def evolution_fd_check(states: Sequence, amb: AmbientSpace) -> EvolutionReport:
    """Central-difference check of the first-variation equations along a flow.

    ``states`` are three consecutive flow states (or shape states) with equal
    time spacing.  With exterior normal and outward speed ``F = W``:
    ``d_t dmu = H F dmu``, ``d_t g_ij = 2 F A_ij``, ``D_t nu = -grad F`` and
    ``d_t A_ij = -Hess_ij F + F A_ik A^k_j - F R(e_i, nu, nu, e_j)``.
    """
    if len(states) != 3:
        raise BadParams("evolution check needs exactly three states")
    sh = [s.shape if hasattr(s, "shape") and isinstance(s.shape, ShapeState) else s for s in states]
    ims = [s.immersion for s in sh]
    tri = ims[0].triangles
    for im in ims[1:]:
        if im.triangles.shape != tri.shape or not np.array_equal(im.triangles, tri):
            raise ConnectivityChanged("states do not share one triangulation")
    d1, d2 = ims[1].t - ims[0].t, ims[2].t - ims[1].t
    if not (d1 > 0 and abs(d2 - d1) <= 1e-9 * max(d1, d2)):
        raise BadParams(f"states must be equally spaced in time (got {d1!r}, {d2!r})")
    dt = 0.5 * (d1 + d2)
    mid = sh[1]
    p0, p1, p2 = (im.vertices for im in ims)
    vel = (p2 - p0) / (2 * dt)
    eps = 1e-6 / max(float(np.abs(vel).max()), 1e-300)
    plus = shape_state(ims[1].with_vertices(p1 + eps * vel), amb)
    minus = shape_state(ims[1].with_vertices(p1 - eps * vel), amb)
    m = [induced_metric(im, amb) for im in ims]
    mp, mm = induced_metric(plus.immersion, amb), induced_metric(minus.immersion, amb)
    W, H = mid.W, mid.H
    w = m[1].dmu
    out = {}

    # area element, relative to dmu
    cd = (m[2].dmu - m[0].dmu) / (2 * dt) / w
    dd = (mp.dmu - mm.dmu) / (2 * eps) / w
    rhs = (H * W)[tri].mean(axis=1)
    out["dmu"] = _norms("dmu", cd - rhs, cd - dd, dd - rhs, rhs, w)

    # induced metric, parameter basis
    g1 = m[1].g
    cdg = (m[2].g - m[0].g) / (2 * dt)
    ddg = (mp.g - mm.g) / (2 * eps)
    P = _param_frame(mid, m[1].jacobian)
    Ap = _to_param(P, mid.A[tri])
    WAp = _to_param(P, (W[:, None, None] * mid.A)[tri])
    rg = 2 * WAp
    out["g"] = _norms(
        "g", _tensor_norm(g1, cdg - rg), _tensor_norm(g1, cdg - ddg), _tensor_norm(g1, ddg - rg),
        _tensor_norm(g1, rg), w,
    )

    # normal, covariant time derivative against -grad W
    lam = amb.conformal_factor(p1)
    vw = mid.op.dual_area
    grad = tangential_gradient(ims[1], amb, W, m[1])
    gv = np.zeros_like(p1)
    for c in range(3):
        np.add.at(gv, tri[:, c], grad.vector * w[:, None])
    gv /= np.maximum(np.bincount(tri.ravel(), np.repeat(w, 3), len(p1)), 1e-300)[:, None]
    nu1 = mid.nu
    gv -= np.einsum("ni,ni->n", gv, nu1)[:, None] * nu1 * lam[:, None] ** 2
    G = amb.christoffel(p1, check=False)
    conn = np.einsum("nkij,ni,nj->nk", G, vel, nu1)
    cdn = (sh[2].nu - sh[0].nu) / (2 * dt) + conn
    ddn = (plus.nu - minus.nu) / (2 * eps) + conn
    rn = -gv
    vn = lambda x: lam * np.linalg.norm(x, axis=1)
    out["nu"] = _norms("nu", vn(cdn - rn), vn(cdn - ddn), vn(ddn - rn), vn(rn), vw)

    # second fundamental form, parameter basis
    A_t = [_triangle_A(s) for s in (sh[0], sh[2])]
    Apl, Ami = _triangle_A(plus), _triangle_A(minus)
    _, hessW = vertex_derivatives(mid, W)
    hW = _to_param(P, hessW[tri])
    gi = np.linalg.inv(g1)
    Wt = W[tri].mean(axis=1)
    quad = Wt[:, None, None] * (Ap @ gi @ Ap)
    if amb.kind == "euclidean":
        curv = np.zeros_like(Ap)
    elif amb.is_model:
        curv = amb.curvature * Wt[:, None, None] * g1
    else:
        R = amb.riemann(m[1].barycenter)
        nb = nu1[tri].mean(axis=1)
        J = m[1].jacobian
        curv = Wt[:, None, None] * np.einsum("fabcd,fai,fb,fc,fdj->fij", R, J, nb, nb, J)
    rA = -hW + quad - curv
    cdA = (A_t[1] - A_t[0]) / (2 * dt)
    ddA = (Apl - Ami) / (2 * eps)
    out["A"] = _norms(
        "A", _tensor_norm(g1, cdA - rA), _tensor_norm(g1, cdA - ddA), _tensor_norm(g1, ddA - rA),
        _tensor_norm(g1, rA), w,
    )
    return EvolutionReport(dt, float(m[1].edge_length.max()), out)


# ------------------------------------------------------------------- lifespan
@dataclass(frozen=True)
class LifespanFit:
    slope: float
    intercept: float
    r2: float
    c_hat: float
    bound_ok: np.ndarray

    @property
    def all_ok(self) -> bool:
        return bool(np.all(self.bound_ok))


def lifespan_fit(experiments, c_hat: Optional[float] = None) -> LifespanFit:
    """Least squares of log T against log rho over (rho0, T) pairs.

    ``c_hat`` defaults to the smallest constant with ``T >= rho0^4 / c_hat``
    across the corpus.  ``r2`` is nan when every T is equal.
    """
    data = np.asarray([(float(r), float(t)) for r, t in experiments], dtype=float).reshape(-1, 2)
    good = np.all(np.isfinite(data), axis=1) & (data[:, 0] > 0) & (data[:, 1] > 0)
    if good.sum() < 4:
        raise InsufficientData(f"need at least 4 experiments with positive rho0 and T, got {int(good.sum())}")
    rho, T = data[good, 0], data[good, 1]
    x, y = np.log(rho), np.log(T)
    if np.ptp(x) == 0:
        raise InsufficientData("all experiments share one rho0; slope undefined")
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((res**2).sum()) / ss_tot if ss_tot > 0 else math.nan
    if c_hat is None:
        c_hat = float((rho**4 / T).max())
    ok = data[:, 1] * (1 + 1e-12) >= data[:, 0] ** 4 / c_hat
    return LifespanFit(float(slope), float(intercept), r2, float(c_hat), ok)
