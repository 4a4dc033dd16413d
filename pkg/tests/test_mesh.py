import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from willmore_lab import ambient
from willmore_lab.errors import DegenerateTriangle, InvalidMesh, NonFiniteInput
from willmore_lab.io import meshgen
from willmore_lab.mesh import (
    Immersion,
    cotan_operator,
    covariant_derivative,
    edge_lengths,
    induced_metric,
    laplace_beltrami,
    quality_report,
    tangential_gradient,
    vertex_normal,
)

from conftest import cached_mesh, random_rotation


def tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Immersion.from_arrays(v, f)


def orders(h, err):
    return np.polyfit(np.log(h), np.log(err), 1)[0]


# ----------------------------------------------------------------- topology
def test_euler_characteristic():
    assert meshgen.icosphere(0).n_vertices == 12 and len(meshgen.icosphere(0).triangles) == 20
    assert cached_mesh("icosphere", 3).topology.euler_characteristic() == 2
    assert cached_mesh("torus", 2.0, 1.0, 64, 32).topology.euler_characteristic() == 0
    assert cached_mesh("torus", 2.0, 1.0, 64, 32).topology.genus() == 1


def test_rejects_open_and_misoriented_meshes():
    t = tetrahedron()
    with pytest.raises(InvalidMesh):
        Immersion.from_arrays(t.vertices, t.triangles[:3])
    flipped = t.triangles.copy()
    flipped[0] = flipped[0, ::-1]
    with pytest.raises(InvalidMesh):
        Immersion.from_arrays(t.vertices, flipped)
    with pytest.raises(NonFiniteInput):
        Immersion.from_arrays(np.full((4, 3), np.nan), t.triangles)


# ------------------------------------------------------------------ metric
def test_equilateral_triangle_metric_is_edge_gram(E):
    im = tetrahedron()
    m = induced_metric(im, E)
    v, t = im.vertices, im.triangles
    e = np.stack([v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]], axis=2)
    assert np.allclose(m.g, np.einsum("fai,faj->fij", e, e))
    assert np.allclose(m.dmu, math.sqrt(3) / 4 * 8)
    assert quality_report(im, E).max_aspect == pytest.approx(1.0)


def test_sphere_area_converges(E):
    levels = [2, 3, 4, 5]
    h, err = [], []
    for lv in levels:
        im = cached_mesh("icosphere", lv)
        h.append(edge_lengths(im, E).max())
        err.append(abs(induced_metric(im, E).total_area - 4 * math.pi))
    assert np.all(np.diff(err) < 0)
    assert orders(h, err) >= 1.9


@pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
def test_euclidean_scaling(E, lam):
    im = cached_mesh("ellipsoid", 1.5, 1.0, 1.0, 3)
    big = im.with_vertices(lam * im.vertices)
    assert np.allclose(induced_metric(big, E).dmu, lam**2 * induced_metric(im, E).dmu, rtol=1e-13)
    u = np.sin(im.vertices[:, 0])
    assert np.allclose(laplace_beltrami(big, E, u), laplace_beltrami(im, E, u) / lam**2, rtol=1e-9, atol=1e-12)


def test_hyperbolic_metric_is_pullback(H3):
    im = meshgen.geodesic_sphere(H3, 0.5, 2)
    m = induced_metric(im, H3)
    lam2 = H3.conformal_factor(m.barycenter) ** 2
    gram = np.einsum("fai,faj->fij", m.jacobian, m.jacobian) * lam2[:, None, None]
    assert np.allclose(m.g, gram)


def test_degenerate_triangle_detected(E):
    im = tetrahedron()
    v = im.vertices.copy()
    v[3] = (v[0] + v[1]) / 2  # collapses two faces onto the same line
    with pytest.raises(DegenerateTriangle):
        induced_metric(im.with_vertices(v), E)


# ----------------------------------------------------------------- normals
def test_sphere_normals(E):
    for lv in (2, 3, 4):
        im = cached_mesh("icosphere", lv)
        nu = vertex_normal(im, E)
        assert np.arccos(np.clip((nu * im.vertices).sum(1), -1, 1)).max() <= 1e-6


def test_ellipsoid_normals_converge(E):
    errs, h = [], []
    axes = np.array([1.5, 1.0, 0.7])
    for lv in (2, 3, 4):
        im = meshgen.ellipsoid(*axes, level=lv)
        exact = im.vertices / axes**2
        exact /= np.linalg.norm(exact, axis=1)[:, None]
        nu = vertex_normal(im, E)
        errs.append(np.arccos(np.clip((nu * exact).sum(1), -1, 1)).max())
        h.append(edge_lengths(im, E).max())
    assert np.all(np.diff(errs) < 0)
    assert orders(h, errs) >= 1.0


def test_reversed_winding_flips_normal(E):
    im = cached_mesh("ellipsoid", 1.5, 1.0, 1.0, 3)
    assert np.array_equal(vertex_normal(im.reversed(), E), -vertex_normal(im, E))


@pytest.mark.parametrize("amb", [ambient.euclidean(), ambient.hyperbolic(-1.0), ambient.spherical(1.0),
                                 ambient.bump(0.2, 1.0)], ids=lambda a: a.kind)
def test_normals_are_metric_unit(amb):
    im = meshgen.ellipsoid(0.6, 0.4, 0.3, level=3)
    nu = vertex_normal(im, amb)
    g = amb.metric_at(im.vertices)
    assert np.abs(np.einsum("ni,nij,nj->n", nu, g, nu) - 1).max() <= 1e-12


# --------------------------------------------------------------- laplacian
def test_laplacian_kills_constants_and_integrates_to_zero(E, rng):
    im = cached_mesh("torus", 2.0, 1.0, 32, 16)
    op = cotan_operator(im, E)
    assert np.abs(laplace_beltrami(im, E, np.ones(im.n_vertices), op)).max() <= 1e-12
    u = rng.normal(size=im.n_vertices)
    total = np.dot(laplace_beltrami(im, E, u, op), op.dual_area)
    assert abs(total) <= 1e-10 * np.abs(u).max() * op.dual_area.sum()


@pytest.mark.parametrize("amb", [ambient.euclidean(), ambient.hyperbolic(-1.0)], ids=lambda a: a.kind)
def test_laplacian_symmetric_negative_semidefinite(amb):
    im = meshgen.ellipsoid(0.6, 0.4, 0.3, level=2)
    L = cotan_operator(im, amb).L.toarray()
    assert np.allclose(L, L.T)
    assert np.linalg.eigvalsh(L).max() <= 1e-10 * np.abs(L).max()


@given(a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_laplacian_linear(a, b):
    E = ambient.euclidean()
    im = cached_mesh("icosphere", 2)
    u, v = im.vertices[:, 0], im.vertices[:, 1] ** 2
    lhs = laplace_beltrami(im, E, a * u + b * v)
    rhs = a * laplace_beltrami(im, E, u) + b * laplace_beltrami(im, E, v)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-10)


def test_sphere_eigenfunction(E):
    """Pointwise error converges at about order 1.4 on icospheres."""
    h, err = [], []
    for lv in (2, 3, 4, 5):
        im = cached_mesh("icosphere", lv)
        op = cotan_operator(im, E)
        z = im.vertices[:, 2]
        r = laplace_beltrami(im, E, z, op) + 2 * z
        err.append(math.sqrt(np.dot(r**2, op.dual_area) / np.dot(z**2, op.dual_area)))
        h.append(edge_lengths(im, E).max())
    assert np.all(np.diff(err) < 0)
    assert orders(h, err) >= 1.3


def test_nonfinite_field_rejected(E):
    im = cached_mesh("icosphere", 1)
    u = np.zeros(im.n_vertices)
    u[0] = np.inf
    with pytest.raises(NonFiniteInput):
        laplace_beltrami(im, E, u)


# ---------------------------------------------------------------- gradients
def test_gradient_of_linear_function_is_projection(E, rng):
    im = cached_mesh("ellipsoid", 1.5, 1.0, 1.0, 2)
    a = rng.normal(size=3)
    grad = tangential_gradient(im, E, im.vertices @ a)
    v, t = im.vertices, im.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    proj = a - (n @ a)[:, None] * n
    assert np.allclose(grad.vector, proj, atol=1e-12)


def test_sphere_height_gradient(E):
    h, err = [], []
    for lv in (2, 3, 4, 5):
        im = cached_mesh("icosphere", lv)
        m = induced_metric(im, E)
        grad = tangential_gradient(im, E, im.vertices[:, 2], m)
        zc = m.barycenter[:, 2] / np.linalg.norm(m.barycenter, axis=1)
        r = grad.norm**2 - (1 - zc**2)
        err.append(math.sqrt(np.dot(r**2, m.dmu)))
        h.append(edge_lengths(im, E).max())
    assert orders(h, err) >= 0.9


@pytest.mark.parametrize("amb", [ambient.euclidean(), ambient.hyperbolic(-1.0)], ids=lambda a: a.kind)
def test_metric_compatibility(amb):
    errs = []
    for lv in (2, 3, 4):
        im = meshgen.ellipsoid(0.6, 0.4, 0.3, level=lv)
        m = induced_metric(im, amb)
        ng = covariant_derivative(im, amb, m.g, m)
        scale = np.linalg.norm(m.g, axis=(1, 2)).mean()
        errs.append(np.abs(ng).max() / scale)
    assert max(errs) <= 1e-12


def test_flat_metric_derivative_is_plain_difference(E):
    # a constant tensor on a plane-like region: compare with rotated copies
    im = cached_mesh("icosphere", 3)
    m = induced_metric(im, E)
    R = random_rotation(np.random.default_rng(1))
    im2 = im.with_vertices(im.vertices @ R.T)
    m2 = induced_metric(im2, E)
    a = covariant_derivative(im, E, m.g, m)
    b = covariant_derivative(im2, E, m2.g, m2)
    assert np.allclose(a, b, atol=1e-9)


# ----------------------------------------------------------------- quality
def test_icosphere_quality(E):
    q = quality_report(cached_mesh("icosphere", 3), E)
    assert q.min_angle_deg > 30
    assert q.min_area > 0
    assert q.acceptable()
