import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from geocaustic.curve import arc_length_reparameterize, curve_from_dict, expression_curve  # noqa: E402
from geocaustic.io import read_json  # noqa: E402
from geocaustic.surface import (FlatPlane, HyperbolicHalfPlane, Spheroid,  # noqa: E402
                                surface_from_dict)

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def load_fixture_surface(name):
    return surface_from_dict(read_json(fixture_path(name))[0])


def load_fixture_curve(name):
    desc, _ = read_json(fixture_path(name))
    ref = desc["surface"]
    surface = load_fixture_surface(ref) if ref.endswith(".json") else surface_from_dict(
        {"kind": ref})
    return curve_from_dict(desc, surface)


@pytest.fixture(scope="session")
def plane():
    return FlatPlane()


@pytest.fixture(scope="session")
def sphere():
    return Spheroid(1.0)


@pytest.fixture(scope="session")
def hyperbolic():
    return HyperbolicHalfPlane()


@pytest.fixture(scope="session")
def ellipsoid():
    return Spheroid(1.2)


@pytest.fixture(scope="session")
def latitude_circle():
    return load_fixture_curve("sphere_latitude.json")


@pytest.fixture(scope="session")
def ellipsoid_curve():
    return load_fixture_curve("ellipsoid_inflection.json")


@pytest.fixture(scope="session")
def polar_circle():
    return load_fixture_curve("perturbed_polar_circle.json")


@pytest.fixture(scope="session")
def plane_circle(plane):
    return arc_length_reparameterize(
        expression_curve(plane, "cos(xi)", "sin(xi)", (0.0, 6.283185307179586), closed=True))
