"""Riemannian ambient 3-manifolds given on a single global chart.

Every supported metric is conformally flat, ``g = exp(2 phi) * I`` on an open
subset of R^3.  The model spaces use the kappa-stereographic chart:

* Euclidean: ``phi = 0``.
* Hyperbolic (kappa < 0): Poincare ball of chart radius ``1/sqrt(-kappa)``.
* Spherical (kappa > 0): stereographic projection from the antipode of the
  chart origin, with a polar cap removed.

Curvature tensors use the convention ``R(X,Y)Z = nabla_X nabla_Y Z -
nabla_Y nabla_X Z - nabla_[X,Y] Z`` and ``R_ijkl = <R(d_i, d_j) d_k, d_l>``,
so a space of constant curvature kappa has
``R_ijkl = kappa (g_il g_jk - g_ik g_jl)``, ``Ric = 2 kappa g`` and
``Sc = 6 kappa``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import NoConvergence, OutOfChart, RadiusExceedsInjectivity

# Spherical chart: points farther than this fraction of pi/sqrt(kappa) from the
# chart origin fall inside the excluded polar cap.
SPHERICAL_CAP_FRACTION = 0.95

# Step used when validating analytic derivatives by finite differences.
FD_STEP = 1e-4


def _as_points(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"chart points must have 3 coordinates, got shape {p.shape}")
    return p


@dataclass(frozen=True)
class AmbientSpace:
    """A conformally flat Riemannian 3-manifold on one chart.

    Build instances with :func:`euclidean`, :func:`hyperbolic`,
    :func:`spherical` or :func:`conformal` rather than directly.
    """

    kind: str
    curvature: float = 0.0
    inj_radius: float = math.inf
    sect_sup: float = 0.0
    sect_inf: float = 0.0
    ricci_deriv_bounds: tuple = (0.0,) * 6
    chart_radius: float = math.inf
    phi: Optional[Callable] = field(default=None, compare=False, repr=False)
    grad_phi: Optional[Callable] = field(default=None, compare=False, repr=False)
    hess_phi: Optional[Callable] = field(default=None, compare=False, repr=False)
    label: str = ""

    # ------------------------------------------------------------------ chart
    @property
    def is_model(self) -> bool:
        return self.kind in ("euclidean", "hyperbolic", "spherical")

    def chart_tag(self) -> str:
        """Text recorded in ``# chart:`` comments of OBJ files."""
        if self.kind == "euclidean":
            return "euclidean"
        if self.kind in ("hyperbolic", "spherical"):
            return f"{self.kind} {self.curvature!r}"
        return f"conformal {self.label or 'custom'}"

    def in_chart(self, p) -> np.ndarray:
        p = _as_points(p)
        r2 = np.einsum("...i,...i->...", p, p)
        ok = np.all(np.isfinite(p), axis=-1)
        if self.kind == "hyperbolic":
            ok &= -self.curvature * r2 < 1.0
        elif math.isfinite(self.chart_radius):
            ok &= r2 <= self.chart_radius**2
        return ok

    def check_chart(self, p):
        p = _as_points(p)
        ok = self.in_chart(p)
        if not np.all(ok):
            bad = np.argwhere(~np.atleast_1d(ok)).ravel()
            raise OutOfChart(
                f"{bad.size} point(s) outside the {self.kind} chart "
                f"(first offending index {int(bad[0]) if bad.size else 0})"
            )
        return p

    # ---------------------------------------------------------- conformal data
    def _phi_derivs(self, p):
        """Return (phi, dphi, ddphi) with shapes (...), (...,3), (...,3,3)."""
        p = _as_points(p)
        if self.kind == "euclidean":
            z = np.zeros(p.shape[:-1])
            return z, np.zeros(p.shape), np.zeros(p.shape + (3,))
        if self.kind in ("hyperbolic", "spherical"):
            k = self.curvature
            s = 1.0 + k * np.einsum("...i,...i->...", p, p)
            phi = np.log(2.0 / s)
            dphi = -2.0 * k * p / s[..., None]
            eye = np.eye(3)
            ddphi = (-2.0 * k / s)[..., None, None] * eye + (
                4.0 * k * k / s**2
            )[..., None, None] * (p[..., :, None] * p[..., None, :])
            return phi, dphi, ddphi
        return (
            np.asarray(self.phi(p), dtype=float),
            np.asarray(self.grad_phi(p), dtype=float),
            np.asarray(self.hess_phi(p), dtype=float),
        )

    def conformal_factor(self, p) -> np.ndarray:
        """lambda(p) = exp(phi(p)); the metric is lambda^2 times the identity."""
        return np.exp(self._phi_derivs(p)[0])

    # -------------------------------------------------------------- operations
    def metric_at(self, p) -> np.ndarray:
        p = self.check_chart(p)
        lam2 = self.conformal_factor(p) ** 2
        return lam2[..., None, None] * np.eye(3)

    def christoffel(self, p, check=True) -> np.ndarray:
        """Christoffel symbols indexed ``[..., k, i, j]`` (Gamma^k_ij)."""
        if check:
            p = self.check_chart(p)
        _, d, _ = self._phi_derivs(p)
        return _conformal_christoffel(d)

    def christoffel_derivative(self, p) -> np.ndarray:
        """Analytic d_l Gamma^k_ij indexed ``[..., l, k, i, j]``."""
        _, _, dd = self._phi_derivs(p)
        eye = np.eye(3)
        # d_l G^k_ij = delta_ki phi_jl + delta_kj phi_il - delta_ij phi_kl
        t1 = np.einsum("ki,...jl->...lkij", eye, dd)
        t2 = np.einsum("kj,...il->...lkij", eye, dd)
        t3 = np.einsum("ij,...kl->...lkij", eye, dd)
        return t1 + t2 - t3

    def riemann(self, p) -> np.ndarray:
        """R_ijkl built from the Christoffel symbols and their derivatives."""
        p = self.check_chart(p)
        G = self.christoffel(p, check=False)
        dG = self.christoffel_derivative(p)
        g = self.metric_at(p)
        up = (
            np.einsum("...imjk->...ijkm", dG)
            - np.einsum("...jmik->...ijkm", dG)
            + np.einsum("...mip,...pjk->...ijkm", G, G)
            - np.einsum("...mjp,...pik->...ijkm", G, G)
        )
        return np.einsum("...ijkm,...ml->...ijkl", up, g)

    def ricci(self, p) -> np.ndarray:
        p = self.check_chart(p)
        R = self.riemann(p)
        ginv = np.linalg.inv(self.metric_at(p))
        return np.einsum("...jk,...ijkl->...il", ginv, R)

    def scalar(self, p) -> np.ndarray:
        p = self.check_chart(p)
        ginv = np.linalg.inv(self.metric_at(p))
        return np.einsum("...il,...il->...", ginv, self.ricci(p))

    def ricci_normal(self, p, nu) -> np.ndarray:
        """Ric(nu, nu) for metric-unit vectors nu given in chart components."""
        p = _as_points(p)
        if self.kind == "euclidean":
            return np.zeros(p.shape[:-1])
        if self.kind in ("hyperbolic", "spherical"):
            return np.full(p.shape[:-1], 2.0 * self.curvature)
        return np.einsum("...i,...ij,...j->...", nu, self.ricci(p), nu)

    # -------------------------------------------------------------- distances
    def geodesic_distance(self, p, q, check=True) -> np.ndarray:
        p = _as_points(p)
        q = _as_points(q)
        if check:
            self.check_chart(p)
            self.check_chart(q)
        diff = np.sqrt(np.einsum("...i,...i->...", p - q, p - q))
        if self.kind == "euclidean":
            return diff
        if self.is_model:
            k = self.curvature
            rk = math.sqrt(abs(k))
            sp = 1.0 + k * np.einsum("...i,...i->...", p, p)
            sq = 1.0 + k * np.einsum("...i,...i->...", q, q)
            arg = rk * diff / np.sqrt(sp * sq)
            if k < 0:
                return 2.0 * np.arcsinh(arg) / rk
            return 2.0 * np.arcsin(np.clip(arg, 0.0, 1.0)) / rk
        u = self.log_map(p, q)
        lam = self.conformal_factor(p)
        return lam * np.sqrt(np.einsum("...i,...i->...", u, u))

    def exp_map(self, p, v) -> np.ndarray:
        """Exponential map at chart point p of chart tangent vector v."""
        p = _as_points(p)
        v = np.asarray(v, dtype=float)
        if self.kind == "euclidean":
            return p + v
        if self.is_model:
            k = self.curvature
            lam = 2.0 / (1.0 + k * np.einsum("...i,...i->...", p, p))
            nv = np.sqrt(np.einsum("...i,...i->...", v, v))
            safe = np.where(nv > 0, nv, 1.0)
            step = _tan_k(k, lam * nv / 2.0) / safe
            return mobius_add(k, p, step[..., None] * v)
        return _rk4_geodesic(self, p, v)

    def log_map(self, p, q, tol=1e-13, maxiter=50) -> np.ndarray:
        """Inverse of :meth:`exp_map`: chart tangent vector at p reaching q."""
        p = _as_points(p)
        q = _as_points(q)
        if self.kind == "euclidean":
            return q - p
        if self.is_model:
            k = self.curvature
            lam = 2.0 / (1.0 + k * np.einsum("...i,...i->...", p, p))
            w = mobius_add(k, -p, q)
            nw = np.sqrt(np.einsum("...i,...i->...", w, w))
            safe = np.where(nw > 0, nw, 1.0)
            return ((2.0 / lam) * _artan_k(k, nw) / safe)[..., None] * w
        # geodesic shooting by fixed-point iteration on the endpoint mismatch
        p, q = np.broadcast_arrays(p, q)
        G = self.christoffel(p, check=False)
        d = q - p
        u = d + 0.5 * np.einsum("...kij,...i,...j->...k", G, d, d)
        scale = np.maximum(np.sqrt(np.einsum("...i,...i->...", d, d)), 1e-300)
        for _ in range(maxiter):
            miss = q - _rk4_geodesic(self, p, u)
            u = u + miss
            err = np.sqrt(np.einsum("...i,...i->...", miss, miss))
            if np.all(err <= tol * np.maximum(scale, 1.0)):
                return u
        raise NoConvergence("geodesic shooting did not converge")

    # ---------------------------------------------------------------- covering
    def covering_constant(self, rho: float) -> int:
        """Upper bound on the number of rho/2-balls needed to cover a rho-ball."""
        return len(self._covering_offsets(rho))

    def covering_points(self, x, rho: float) -> np.ndarray:
        """Centers of an explicit cover of B_rho(x) by balls of radius rho/2."""
        x = _as_points(x)
        offs = self._covering_offsets(rho)
        lam = self.conformal_factor(x)
        return self.exp_map(np.broadcast_to(x, offs.shape), offs / lam)

    def _covering_offsets(self, rho: float) -> np.ndarray:
        if not rho > 0:
            raise ValueError("rho must be positive")
        if rho >= self.inj_radius:
            raise RadiusExceedsInjectivity(
                f"rho={rho} is not below the injectivity radius {self.inj_radius}"
            )
        # Rauch comparison: with sectional curvature >= -k^2 the exponential
        # map is Lipschitz with constant sinh(k r)/(k r) on the r-ball.
        k2 = max(0.0, -self.sect_inf)
        r = 1.5 * rho
        lip = 1.0 if k2 == 0 else math.sinh(math.sqrt(k2) * r) / (math.sqrt(k2) * r)
        unit = _bcc_cover(round(lip, 12))
        return unit * rho


def _tan_k(k, s):
    rk = math.sqrt(abs(k))
    if k < 0:
        return np.tanh(rk * s) / rk
    return np.tan(rk * s) / rk


def _artan_k(k, s):
    rk = math.sqrt(abs(k))
    if k < 0:
        return np.arctanh(rk * s) / rk
    return np.arctan(rk * s) / rk


def mobius_add(k, x, y):
    """Mobius addition of the kappa-stereographic model of constant curvature k."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xy = np.einsum("...i,...i->...", x, y)
    x2 = np.einsum("...i,...i->...", x, x)
    y2 = np.einsum("...i,...i->...", y, y)
    num = (1.0 - 2.0 * k * xy - k * y2)[..., None] * x + (1.0 + k * x2)[..., None] * y
    den = 1.0 - 2.0 * k * xy + k * k * x2 * y2
    return num / den[..., None]


def _conformal_christoffel(d):
    # G^k_ij = delta_ki phi_j + delta_kj phi_i - delta_ij phi_k
    eye = np.eye(3)
    return (
        np.einsum("ki,...j->...kij", eye, d)
        + np.einsum("kj,...i->...kij", eye, d)
        - np.einsum("ij,...k->...kij", eye, d)
    )


def _rk4_geodesic(amb, p, v, substeps=16):
    """Integrate x'' = -Gamma(x)(x', x') on [0, 1] with classical RK4."""
    x = np.array(np.broadcast_to(p, np.broadcast_shapes(np.shape(p), np.shape(v))))
    u = np.array(np.broadcast_to(v, x.shape))
    h = 1.0 / substeps

    def acc(xx, uu):
        # contracted conformal Christoffel symbols: 2 u (dphi.u) - dphi |u|^2
        d = np.asarray(amb.grad_phi(xx), dtype=float)
        du = np.einsum("...i,...i->...", d, uu)[..., None]
        uu2 = np.einsum("...i,...i->...", uu, uu)[..., None]
        return -(2.0 * du * uu - d * uu2)

    for _ in range(substeps):
        k1x, k1u = u, acc(x, u)
        k2x, k2u = u + 0.5 * h * k1u, acc(x + 0.5 * h * k1x, u + 0.5 * h * k1u)
        k3x, k3u = u + 0.5 * h * k2u, acc(x + 0.5 * h * k2x, u + 0.5 * h * k2u)
        k4x, k4u = u + h * k3u, acc(x + h * k3x, u + h * k3u)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        u = u + h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    return x


@lru_cache(maxsize=64)
def _bcc_cover(lip: float) -> np.ndarray:
    """Offsets (in units of rho) of a body-centred cubic cover of the unit ball.

    Every tangent vector of length <= 1 lies within ``R = 0.5 / lip`` of some
    returned lattice point, and the exponential map stretches that gap by at
    most ``lip``, so the images are centres of a cover by radius-1/2 balls.
    The lattice offset minimising the count is chosen deterministically.
    """
    R = 0.5 / lip * (1.0 - 1e-9)
    a = 4.0 * R / math.sqrt(5.0)  # BCC covering radius is a*sqrt(5)/4
    n = int(math.ceil((1.0 + R) / a)) + 2
    idx = np.arange(-n, n + 1)
    base = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), -1).reshape(-1, 3)
    lattice = np.concatenate([base, base + 0.5]) * a
    best = None
    grid = np.linspace(0.0, 0.5, 6)
    for ox in grid:
        for oy in grid:
            for oz in grid:
                pts = lattice + a * np.array([ox, oy, oz])
                keep = pts[np.einsum("ij,ij->i", pts, pts) <= (1.0 + R) ** 2]
                if best is None or len(keep) < len(best):
                    best = keep
    best = best[np.lexsort(best.T[::-1])]
    best.setflags(write=False)
    return best


# --------------------------------------------------------------------------
# factories


def euclidean() -> AmbientSpace:
    return AmbientSpace(kind="euclidean", label="euclidean")


def hyperbolic(curvature: float = -1.0) -> AmbientSpace:
    if not curvature < 0:
        raise ValueError("hyperbolic space needs negative curvature")
    k = float(curvature)
    return AmbientSpace(
        kind="hyperbolic",
        curvature=k,
        inj_radius=math.inf,
        sect_sup=k,
        sect_inf=k,
        ricci_deriv_bounds=(2.0 * abs(k), 0.0, 0.0, 0.0, 0.0, 0.0),
        chart_radius=1.0 / math.sqrt(-k),
        label=f"hyperbolic {k!r}",
    )


def spherical(curvature: float = 1.0) -> AmbientSpace:
    if not curvature > 0:
        raise ValueError("spherical space needs positive curvature")
    k = float(curvature)
    rk = math.sqrt(k)
    return AmbientSpace(
        kind="spherical",
        curvature=k,
        inj_radius=math.pi / rk,
        sect_sup=k,
        sect_inf=k,
        ricci_deriv_bounds=(2.0 * k, 0.0, 0.0, 0.0, 0.0, 0.0),
        chart_radius=math.tan(SPHERICAL_CAP_FRACTION * math.pi / 2.0) / rk,
        label=f"spherical {k!r}",
    )


def conformal(
    phi,
    grad_phi,
    hess_phi,
    *,
    inj_radius: float,
    sect_sup: float,
    sect_inf: float,
    ricci_deriv_bounds,
    chart_radius: float = math.inf,
    label: str = "custom",
) -> AmbientSpace:
    """Metric ``exp(2 phi) I``; curvature bounds are declared by the caller."""
    bounds = tuple(float(b) for b in ricci_deriv_bounds)
    if len(bounds) != 6 or any(b < 0 for b in bounds):
        raise ValueError("ricci_deriv_bounds needs six nonnegative values")
    if not inj_radius > 0:
        raise ValueError("inj_radius must be positive")
    return AmbientSpace(
        kind="conformal",
        inj_radius=float(inj_radius),
        sect_sup=float(sect_sup),
        sect_inf=float(sect_inf),
        ricci_deriv_bounds=bounds,
        chart_radius=float(chart_radius),
        phi=phi,
        grad_phi=grad_phi,
        hess_phi=hess_phi,
        label=label,
    )


def gaussian_bump(amplitude=0.1, width=1.0, center=(0.0, 0.0, 0.0)):
    """phi(p) = amplitude * exp(-|p - c|^2 / (2 width^2)) with its derivatives."""
    c = np.asarray(center, dtype=float)
    s2 = float(width) ** 2

    def phi(p):
        d = np.asarray(p, dtype=float) - c
        return amplitude * np.exp(-np.einsum("...i,...i->...", d, d) / (2 * s2))

    def grad(p):
        d = np.asarray(p, dtype=float) - c
        return (-phi(p) / s2)[..., None] * d

    def hess(p):
        d = np.asarray(p, dtype=float) - c
        f = phi(p)
        return (f / s2**2)[..., None, None] * (d[..., :, None] * d[..., None, :]) - (
            f / s2
        )[..., None, None] * np.eye(3)

    return phi, grad, hess


def sampled_curvature_bounds(amb: AmbientSpace, points) -> tuple[float, float, float]:
    """Sectional sup, sectional inf and sup |Ric| over sample points.

    In dimension three the plane orthogonal to a unit vector n has sectional
    curvature ``Sc/2 - Ric(n, n)``, so the extremes come from the Ricci
    eigenvalues in an orthonormal frame.
    """
    p = _as_points(points)
    lam2 = amb.conformal_factor(p) ** 2
    ric = amb.ricci(p) / lam2[:, None, None]
    ev = np.linalg.eigvalsh(0.5 * (ric + ric.transpose(0, 2, 1)))
    sc = ev.sum(axis=1)
    sect = 0.5 * sc[:, None] - ev
    return float(sect.max()), float(sect.min()), float(np.abs(ev).max())


def bump(amplitude=0.1, width=1.0, center=(0.0, 0.0, 0.0), samples=17) -> AmbientSpace:
    """Gaussian conformal bump on R^3 with curvature bounds sampled on a grid.

    The grid covers four widths around the center, outside of which the
    curvature is negligible.  The injectivity radius is taken from the
    conjugate-point bound ``pi / sqrt(sect_sup)`` (infinite when the sampled
    curvature is nonpositive).  Only the zeroth Ricci bound is estimated.
    """
    if not width > 0:
        raise ValueError("bump width must be positive")
    phi, grad, hess = gaussian_bump(amplitude, width, center)
    provisional = conformal(
        phi, grad, hess, inj_radius=math.inf, sect_sup=0.0, sect_inf=0.0,
        ricci_deriv_bounds=(0.0,) * 6, label="bump",
    )
    ax = np.linspace(-4.0 * width, 4.0 * width, int(samples))
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3) + np.asarray(center, float)
    s_sup, s_inf, k0 = sampled_curvature_bounds(provisional, grid)
    inj = math.inf if s_sup <= 0 else math.pi / math.sqrt(s_sup)
    return conformal(
        phi, grad, hess, inj_radius=inj, sect_sup=s_sup, sect_inf=s_inf,
        ricci_deriv_bounds=(k0, 0.0, 0.0, 0.0, 0.0, 0.0),
        label=f"bump {float(amplitude)!r} {float(width)!r} {' '.join(repr(float(c)) for c in center)}",
    )
