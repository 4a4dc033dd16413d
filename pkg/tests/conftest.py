import functools
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from willmore_lab import ambient
from willmore_lab.io import meshgen
from willmore_lab.shape import shape_state

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def cached_mesh(name, *args):
    return getattr(meshgen, name)(*args)


@functools.lru_cache(maxsize=None)
def cached_state(kind, name, *args):
    amb = {"E": ambient.euclidean(), "H": ambient.hyperbolic(-1.0), "S": ambient.spherical(1.0)}[kind]
    if name == "geodesic_sphere":
        im = meshgen.geodesic_sphere(amb, *args)
    else:
        im = cached_mesh(name, *args)
    return shape_state(im, amb)


@pytest.fixture(scope="session")
def E():
    return ambient.euclidean()


@pytest.fixture(scope="session")
def H3():
    return ambient.hyperbolic(-1.0)


@pytest.fixture(scope="session")
def S3():
    return ambient.spherical(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
