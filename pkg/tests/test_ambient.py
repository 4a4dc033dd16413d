import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from willmore_lab import ambient
from willmore_lab.ambient import FD_STEP
from willmore_lab.errors import OutOfChart, RadiusExceedsInjectivity


def random_ball_points(rng, n, radius):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * (radius * rng.random(n) ** (1 / 3))[:, None]


def all_kinds():
    return [
        ambient.euclidean(),
        ambient.hyperbolic(-1.0),
        ambient.hyperbolic(-2.5),
        ambient.spherical(1.0),
        ambient.bump(0.1, 1.0),
    ]


def sample_radius(amb):
    return min(0.9 * amb.chart_radius, 1.5)


# ----------------------------------------------------------------- metric
def test_euclidean_metric_is_identity(E):
    assert np.array_equal(E.metric_at([0.3, -2.0, 5.0]), np.eye(3))


def test_poincare_metric_at_origin(H3):
    assert np.allclose(H3.metric_at([0, 0, 0]), 4 * np.eye(3), rtol=0, atol=1e-15)


def test_conformal_zero_field_is_flat():
    zero = ambient.conformal(
        lambda p: np.zeros(np.shape(p)[:-1]),
        lambda p: np.zeros(np.shape(p)),
        lambda p: np.zeros(np.shape(p) + (3,)),
        inj_radius=math.inf, sect_sup=0.0, sect_inf=0.0, ricci_deriv_bounds=(0,) * 6,
    )
    p = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(zero.metric_at(p), np.broadcast_to(np.eye(3), (10, 3, 3)))


@pytest.mark.parametrize("amb", all_kinds(), ids=lambda a: a.kind)
def test_metric_is_spd(amb, rng):
    g = amb.metric_at(random_ball_points(rng, 50, sample_radius(amb)))
    assert np.allclose(g, g.transpose(0, 2, 1))
    assert np.all(np.linalg.eigvalsh(g) > 0)


def test_chart_bounds():
    with pytest.raises(OutOfChart):
        ambient.hyperbolic(-1.0).metric_at([1.0, 0, 0])
    S = ambient.spherical(1.0)
    with pytest.raises(OutOfChart):
        S.metric_at([2 * S.chart_radius, 0, 0])
    assert S.in_chart([0.9 * S.chart_radius, 0, 0])


# ------------------------------------------------------------- christoffel
@pytest.mark.parametrize("amb", all_kinds(), ids=lambda a: a.kind)
def test_christoffel_matches_metric_differences(amb, rng):
    p = random_ball_points(rng, 100, sample_radius(amb))
    G = amb.christoffel(p)
    assert np.allclose(G, G.transpose(0, 1, 3, 2))
    h = FD_STEP
    dg = np.empty((len(p), 3, 3, 3))  # [n, l, i, j] = d_l g_ij
    for l in range(3):
        e = np.zeros(3)
        e[l] = h
        dg[:, l] = (amb.metric_at(p + e) - amb.metric_at(p - e)) / (2 * h)
    ginv = np.linalg.inv(amb.metric_at(p))
    # Gamma^k_ij = 1/2 g^kl (d_i g_lj + d_j g_li - d_l g_ij)
    t = dg.transpose(0, 2, 1, 3) + dg.transpose(0, 2, 3, 1) - dg
    fd = 0.5 * np.einsum("nkl,nlij->nkij", ginv, t)
    scale = max(1.0, np.abs(G).max())
    assert np.abs(fd - G).max() <= 1e-5 * scale


def test_christoffel_vanishes(E, H3):
    assert np.array_equal(E.christoffel([1.0, 2.0, 3.0]), np.zeros((3, 3, 3)))
    assert np.abs(H3.christoffel([0, 0, 0])).max() == 0


# -------------------------------------------------------------- curvature
@pytest.mark.parametrize("k", [-1.0, -0.3, 1.0, 2.0])
def test_constant_curvature_closed_form(k, rng):
    amb = ambient.hyperbolic(k) if k < 0 else ambient.spherical(k)
    p = random_ball_points(rng, 40, 0.8 * min(amb.chart_radius, 1.0))
    g = amb.metric_at(p)
    R = amb.riemann(p)
    closed = k * (np.einsum("nil,njk->nijkl", g, g) - np.einsum("nik,njl->nijkl", g, g))
    assert np.abs(R - closed).max() <= 1e-6 * np.abs(closed).max()
    assert np.allclose(amb.ricci(p), 2 * k * g, rtol=1e-8, atol=1e-10)
    assert np.allclose(amb.scalar(p), 6 * k, rtol=1e-8)


def test_riemann_symmetries(rng):
    amb = ambient.bump(0.2, 0.8)
    R = amb.riemann(random_ball_points(rng, 20, 1.0))
    assert np.allclose(R, -R.transpose(0, 2, 1, 3, 4))
    assert np.allclose(R, -R.transpose(0, 1, 2, 4, 3))
    assert np.allclose(R, R.transpose(0, 3, 4, 1, 2))
    bianchi = R + R.transpose(0, 1, 3, 4, 2) + R.transpose(0, 1, 4, 2, 3)
    assert np.abs(bianchi).max() <= 1e-10 * np.abs(R).max()


def test_hyperbolic_ricci_normal(H3, rng):
    p = random_ball_points(rng, 10, 0.7)
    nu = rng.normal(size=(10, 3))
    nu /= (np.linalg.norm(nu, axis=1) * H3.conformal_factor(p))[:, None]
    assert np.allclose(np.einsum("ni,nij,nj->n", nu, H3.ricci(p), nu), -2.0)
    assert np.allclose(H3.ricci_normal(p, nu), -2.0)


def test_euclidean_curvature_zero(E):
    p = [[0.1, 0.2, 0.3]]
    assert not np.any(E.riemann(p)) and not np.any(E.ricci(p))
    assert E.sect_sup == 0 and all(b == 0 for b in E.ricci_deriv_bounds)
    assert E.inj_radius == math.inf


def test_nonpositive_curvature_kinds():
    for amb in (ambient.euclidean(), ambient.hyperbolic(-1.0), ambient.hyperbolic(-3.0)):
        assert amb.sect_sup <= 0
        if amb.kind == "hyperbolic":
            assert amb.inj_radius == math.inf


def test_spherical_scalar():
    assert np.isclose(ambient.spherical(1.0).scalar([0.1, 0.0, -0.2]), 6.0)


def test_bump_sampled_bounds():
    b = ambient.bump(0.1, 1.0)
    assert b.sect_inf <= b.sect_sup
    assert b.inj_radius == pytest.approx(math.pi / math.sqrt(b.sect_sup))
    assert b.chart_tag() == "conformal bump 0.1 1.0 0.0 0.0 0.0"


# --------------------------------------------------------------- distance
def test_euclidean_distance(E):
    assert E.geodesic_distance([0, 0, 0], [3, 4, 0]) == 5.0


@given(st.floats(0.0, 0.95))
def test_poincare_radial_distance(r):
    H = ambient.hyperbolic(-1.0)
    assert np.isclose(H.geodesic_distance([0, 0, 0], [r, 0, 0]), 2 * math.atanh(r), rtol=1e-12, atol=1e-15)


def test_poincare_distance_matches_line_element(H3):
    # integrate the conformal line element along the chart segment to the radius
    r = 0.6
    s = np.linspace(0, r, 20001)
    integrand = 2 / (1 - s**2)
    numeric = np.trapezoid(integrand, s) if hasattr(np, "trapezoid") else np.trapz(integrand, s)
    assert abs(H3.geodesic_distance([0, 0, 0], [r, 0, 0]) - numeric) < 1e-8


coords = st.floats(-0.5, 0.5)
points = st.tuples(coords, coords, coords)


@pytest.mark.parametrize("amb", [ambient.euclidean(), ambient.hyperbolic(-1.0), ambient.spherical(1.0)],
                         ids=lambda a: a.kind)
@given(p=points, q=points, r=points)
def test_model_distance_axioms(amb, p, q, r):
    d = amb.geodesic_distance
    assert d(p, q) == d(q, p)
    assert d(p, p) == 0
    assert d(p, q) >= 0
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-9


def test_conformal_distance_symmetric_and_triangle(rng):
    b = ambient.bump(0.2, 1.0)
    p, q, r = random_ball_points(rng, 3, 1.0)
    dpq, dqp = b.geodesic_distance(p, q), b.geodesic_distance(q, p)
    assert abs(dpq - dqp) < 1e-8 * dpq
    assert b.geodesic_distance(p, r) <= dpq + b.geodesic_distance(q, r) + 1e-8
    assert b.geodesic_distance(p, p) == 0


@pytest.mark.parametrize("amb", [ambient.hyperbolic(-1.0), ambient.spherical(1.0), ambient.bump(0.2, 1.0)],
                         ids=lambda a: a.kind)
def test_exp_log_inverse(amb, rng):
    p = random_ball_points(rng, 20, 0.4)
    q = random_ball_points(rng, 20, 0.4)
    v = amb.log_map(p, q)
    assert np.allclose(amb.exp_map(p, v), q, atol=1e-10)


# --------------------------------------------------------------- covering
def test_euclidean_covering_scale_invariant(E):
    c = E.covering_constant(1.0)
    assert c <= 64
    assert all(E.covering_constant(r) == c for r in (1e-3, 0.2, 7.0, 1e4))


def test_hyperbolic_covering_small_radius_limit(E, H3):
    assert H3.covering_constant(1e-4) == E.covering_constant(1.0)
    assert H3.covering_constant(2.0) >= E.covering_constant(1.0)


def test_hyperbolic_covering_depends_on_curvature_radius_product():
    a = ambient.hyperbolic(-1.0).covering_constant(1.0)
    b = ambient.hyperbolic(-4.0).covering_constant(0.5)
    assert a == b


def test_spherical_covering_monotone():
    S = ambient.spherical(1.0)
    vals = [S.covering_constant(r) for r in (0.1, 0.5, 1.0, 2.0, 3.0)]
    assert vals == sorted(vals)


def test_covering_radius_limit():
    with pytest.raises(RadiusExceedsInjectivity):
        ambient.spherical(1.0).covering_constant(4.0)


@pytest.mark.parametrize("amb", [ambient.euclidean(), ambient.hyperbolic(-1.0)], ids=lambda a: a.kind)
def test_covering_points_cover_the_ball(amb, rng):
    """Every sampled point of B_rho(x) lies within rho/2 of some cover centre."""
    x = np.array([0.1, -0.05, 0.02])
    rho = 0.4 if amb.kind == "hyperbolic" else 1.0
    centres = amb.covering_points(x, rho)
    # sample the geodesic ball via the exponential map of tangent vectors
    v = random_ball_points(rng, 3000, rho) / amb.conformal_factor(x)
    pts = amb.exp_map(np.broadcast_to(x, v.shape), v)
    assert np.all(amb.geodesic_distance(x, pts) <= rho * (1 + 1e-9))
    d = amb.geodesic_distance(pts[:, None, :], centres[None, :, :])
    assert np.all(d.min(axis=1) <= rho / 2 * (1 + 1e-9))
