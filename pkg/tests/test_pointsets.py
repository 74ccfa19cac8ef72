import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocaustic.pointsets import Polyline, hausdorff_distance, local_distance, wrap_angle

import oracles


def circle(r, n=2000, cx=0.0, cy=0.0):
    t = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return Polyline(np.zeros(n, int), cx + r * np.cos(t), cy + r * np.sin(t), closed=True)


def latitude(v, n=2000):
    u = np.linspace(-math.pi, math.pi, n, endpoint=False)
    return Polyline(np.zeros(n, int), u, np.full(n, v), closed=True)


def test_identical_sets_have_zero_distance(plane):
    a = circle(1.0)
    assert hausdorff_distance(plane, a, a) == 0.0


def test_concentric_plane_circles(plane):
    assert hausdorff_distance(plane, circle(1.0), circle(1.1)) == pytest.approx(0.1, abs=1e-6)


def test_sphere_latitude_circles(sphere):
    ref = oracles.great_circle_distance(0.3, 0.5, 0.3, 0.51)
    assert ref == pytest.approx(0.01, abs=1e-15)
    got = hausdorff_distance(sphere, latitude(0.5), latitude(0.51))
    assert got == pytest.approx(ref, abs=1e-4)


def test_empty_input_raises(plane):
    empty = Polyline(np.zeros(0, int), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        hausdorff_distance(plane, empty, circle(1.0))


def test_local_distance_matches_great_circle(sphere):
    rng = np.random.default_rng(0)
    u = rng.uniform(-3, 3, 200)
    v = rng.uniform(-1.1, 1.1, 200)
    du, dv = rng.normal(size=(2, 200)) * 1e-3
    d = local_distance(sphere, np.zeros(200, int), u, v, np.zeros(200, int), u + du, v + dv)
    ref = [oracles.great_circle_distance(a, b, a + c, b + e) for a, b, c, e in zip(u, v, du, dv)]
    assert np.allclose(d, ref, rtol=1e-3, atol=1e-9)


def test_local_distance_across_the_seam(sphere):
    d = local_distance(sphere, np.array([0]), np.array([math.pi - 1e-3]), np.array([0.0]),
                       np.array([0]), np.array([-math.pi + 1e-3]), np.array([0.0]))
    assert d[0] == pytest.approx(2e-3, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(r1=st.floats(0.5, 2.0), r2=st.floats(0.5, 2.0), shift=st.floats(-0.3, 0.3))
def test_hausdorff_symmetric_and_bounded(r1, r2, shift):
    from geocaustic.surface import FlatPlane
    plane = FlatPlane()
    a, b = circle(r1, 800), circle(r2, 800, cx=shift)
    d_ab = hausdorff_distance(plane, a, b)
    assert d_ab == hausdorff_distance(plane, b, a)
    # exact Hausdorff distance of two circles is |r1 - r2| + |shift|
    assert d_ab == pytest.approx(abs(r1 - r2) + abs(shift), abs=2e-4 * max(r1, r2) + 1e-9)


@given(x=st.floats(-100, 100))
def test_wrap_angle_range(x):
    w = wrap_angle(x)
    assert -math.pi <= w < math.pi
    assert math.isclose(math.cos(w), math.cos(x), abs_tol=1e-9)
