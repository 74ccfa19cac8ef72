import math

import numpy as np
import pytest

from geocaustic.caustic import (BranchComponent, CausticBranch, assemble_envelope,
                                caustic_domains, detect_singularities, find_self_tangencies,
                                inflection_correspondence, naif_envelope,
                                pencil_caustic_crosscheck, trace_caustic, verify_theorem1)
from geocaustic.curve import arc_length_reparameterize, expression_curve, tangent_geodesic_seed
from geocaustic.flow import conjugate_point
from geocaustic.pointsets import PolylineIndex, hausdorff_distance, local_distance

import oracles
from conftest import load_fixture_curve

TWO_PI = 2 * math.pi


def lonlat(surface, charts, u, v):
    """Chart-0 longitude/latitude of points given in any spheroid chart."""
    charts = np.asarray(charts)
    u = np.array(u, float)
    v = np.array(v, float)
    other = charts != 0
    if np.any(other):
        u[other], v[other] = surface.transfer(charts[other], np.zeros(other.sum(), int),
                                              u[other], v[other])
    return u, v


def branch_points(branch):
    comps = [c for c in branch.components if len(c)]
    return (np.concatenate([c.xi for c in comps]), np.concatenate([c.tau for c in comps]),
            np.concatenate([c.charts for c in comps]), np.concatenate([c.u for c in comps]),
            np.concatenate([c.v for c in comps]))


@pytest.fixture(scope="module")
def sphere_decomposition(latitude_circle):
    return assemble_envelope(latitude_circle, list(range(-2, 3)), T_max=50.0, grid_n=512)


def test_sphere_first_caustic_is_antipodal(latitude_circle, sphere):
    b = trace_caustic(latitude_circle, 1, 512, 50.0)
    xi, tau, charts, u, v = branch_points(b)
    assert xi.size == 512
    assert np.allclose(tau, math.pi, atol=1e-8)
    lon, lat = lonlat(sphere, charts, u, v)
    u0, _ = latitude_circle.position(xi)
    d = [oracles.great_circle_distance(a, b_, c + math.pi, -0.5)
         for a, b_, c in zip(lon, lat, u0)]
    assert max(d) < 1e-6


def test_sphere_second_caustic_is_the_curve(latitude_circle, sphere):
    b = trace_caustic(latitude_circle, 2, 512, 50.0)
    xi, tau, charts, u, v = branch_points(b)
    assert np.allclose(tau, TWO_PI, atol=1e-8)
    lon, lat = lonlat(sphere, charts, u, v)
    u0, v0 = latitude_circle.position(xi)
    d = [oracles.great_circle_distance(*a) for a in zip(lon, lat, u0, v0)]
    assert max(d) < 1e-6


def test_plane_has_empty_caustics(plane_circle):
    for p in (1, -1, 2):
        assert trace_caustic(plane_circle, p, 256, 50.0).empty


def test_domains_on_sphere_plane_and_ellipsoid(latitude_circle, plane_circle, ellipsoid_curve):
    rep = caustic_domains(latitude_circle, list(range(-3, 4)), T_max=50.0)
    for p, dom in rep.domains.items():
        assert len(dom) == 1
        assert dom[0][1] - dom[0][0] == pytest.approx(latitude_circle.length, abs=1e-9)
    rep = caustic_domains(plane_circle, [-1, 0, 1, 2], T_max=50.0, grid_n=128)
    assert all(rep.domains[p] == [] for p in (-1, 1, 2))
    assert rep.domains[0] != []
    # tau_3 runs through the horizon along this curve, so I_3 is a proper subset
    rep = caustic_domains(ellipsoid_curve, [0, 1, 2, 3], T_max=10.0)
    assert rep.nested and rep.violations == []
    full = ellipsoid_curve.xi_range[1] - ellipsoid_curve.xi_range[0]
    width = {p: sum(b - a for a, b in rep.domains[p]) for p in rep.domains}
    assert width[3] < width[1] == pytest.approx(full, abs=1e-9)
    for a, b in rep.domains[3]:
        assert any(c - 1e-12 <= a and b <= d + 1e-12 for c, d in rep.domains[2])


def test_sphere_branch_is_regular(latitude_circle):
    b = trace_caustic(latitude_circle, 1, 512, 50.0)
    recs = detect_singularities(b, latitude_circle)
    assert [r for r in recs if r.kind in ("cusp", "self-intersection")] == []


def _curve_fn(t):
    return t**3 - 3 * t, 3 * t**2 - t**4


def test_synthetic_self_intersections_match_brute_force(plane):
    t = np.linspace(-2.2, 2.2, 512)
    x, y = _curve_fn(t)
    comp = BranchComponent(t, np.ones_like(t), np.zeros(t.size, int), x, y, 3 * t**2 - 3,
                           6 * t - 4 * t**3, np.zeros(t.size, bool))
    branch = CausticBranch(1, [comp], 512, 50.0, (-2.2, 2.2), False)
    recs = [r for r in detect_singularities(branch, surface=plane)
            if r.kind == "self-intersection"]
    pts, params = oracles.brute_force_self_intersections(x, y)
    step = t[1] - t[0]
    ref = [oracles.exact_crossing(lambda s: _curve_fn(s), t[0] + a * step, t[0] + b * step)
           for a, b in params]
    assert len(recs) == len(ref) == 3
    for r in recs:
        s0, s1 = sorted(r.params)
        best = min(ref, key=lambda z: abs(min(z[0], z[1]) - s0) + abs(max(z[0], z[1]) - s1))
        assert abs(min(best[0], best[1]) - s0) < 1e-6 and abs(max(best[0], best[1]) - s1) < 1e-6
        assert np.hypot(r.location.u - best[2][0], r.location.v - best[2][1]) < 1e-6
    # the crossing of the pair (-sqrt 3, sqrt 3) is the origin
    assert any(np.allclose(sorted(z[:2]), [-math.sqrt(3), math.sqrt(3)], atol=1e-9)
               and np.allclose(z[2], 0.0, atol=1e-9) for z in ref)


def test_naif_cloud_of_plane_circle_hugs_the_circle(plane_circle):
    eps = 1e-4
    cloud = naif_envelope(plane_circle, eps, 256, 50.0)
    assert len(cloud.points) > 0
    r = np.hypot(cloud.points.u, cloud.points.v)
    assert np.max(np.abs(r - 1.0)) < 10 * eps


def test_naif_cloud_on_sphere_near_curve_and_antipode(latitude_circle, sphere_decomposition):
    surface = latitude_circle.surface
    cloud = naif_envelope(latitude_circle, 1e-4, 256, 50.0)
    lines = [sphere_decomposition.branches[p].polylines()[0] for p in (0, 1)]
    d = PolylineIndex(surface, lines).distance(cloud.points.charts, cloud.points.u,
                                               cloud.points.v)
    assert np.max(d) < 1e-3


def test_naif_error_at_least_halves_with_epsilon(latitude_circle, sphere_decomposition):
    surface = latitude_circle.surface
    index = PolylineIndex(surface, sphere_decomposition.polylines())
    worst = []
    for eps in (4e-3, 2e-3):
        pts = naif_envelope(latitude_circle, eps, 256, 50.0).points
        worst.append(float(np.max(index.distance(pts.charts, pts.u, pts.v))))
    assert worst[1] <= 0.5 * worst[0]


def test_plane_cubic_decomposition(plane):
    c = arc_length_reparameterize(expression_curve(plane, "xi", "xi^3", (-1.0, 1.0)))
    dec = assemble_envelope(c, "auto", T_max=10.0, grid_n=256)
    assert all(dec.branches[p].empty for p in dec.branches if p != 0)
    assert len(dec.inflectional_geodesics) == 1
    g = dec.inflectional_geodesics[0]
    assert np.max(np.abs(g.v)) < 1e-8
    assert np.min(g.u) == pytest.approx(-10.0, abs=1e-6) and np.max(g.u) == pytest.approx(10.0,
                                                                                       abs=1e-6)


def test_sphere_decomposition(sphere_decomposition):
    dec = sphere_decomposition
    assert sorted(dec.branches) == [-2, -1, 0, 1, 2]
    assert dec.inflectional_geodesics == []
    assert not dec.truncated
    surface = dec.curve.surface
    assert hausdorff_distance(surface, dec.branches[1].polylines(),
                              dec.branches[-1].polylines()) < 1e-6
    assert hausdorff_distance(surface, dec.branches[2].polylines(),
                              dec.branches[0].polylines()) < 1e-6


def test_hyperbolic_convex_curve_decomposition():
    c = load_fixture_curve("hyperbolic_circle.json")
    dec = assemble_envelope(c, "auto", T_max=50.0, grid_n=256)
    assert dec.inflectional_geodesics == []
    assert all(b.empty for p, b in dec.branches.items() if p != 0)
    assert not dec.branches[0].empty


def test_verify_plane_circle(plane_circle):
    dec = assemble_envelope(plane_circle, "auto", T_max=50.0, grid_n=256)
    rep = verify_theorem1(plane_circle, dec, 1e-4, 1e-3)
    assert rep.coverage == 1.0 and rep.membership == 1.0


def test_pencil_crosscheck(latitude_circle, plane_circle):
    rep = pencil_caustic_crosscheck(latitude_circle, 1, grid_n=400)
    assert rep["hausdorff"] < 1e-3
    rep = pencil_caustic_crosscheck(plane_circle, 1, grid_n=100)
    assert rep["consistent_empty"] and rep["n_envelope"] == 0


def test_pencil_crosscheck_ellipsoid(ellipsoid_curve):
    rep = pencil_caustic_crosscheck(ellipsoid_curve, 1, grid_n=400)
    assert rep["hausdorff"] < 5e-3


def test_inflection_correspondence(latitude_circle):
    b = trace_caustic(latitude_circle, 1, 256, 50.0)
    assert inflection_correspondence(latitude_circle, b) == []
    wave = load_fixture_curve("perturbed_sphere_wave.json")
    b = trace_caustic(wave, 1, 512, 50.0)
    rep = inflection_correspondence(wave, b)
    assert len(rep) == 2 and all(r["matched"] for r in rep)
    assert all(abs(r["branch_xi"] - r["xi"]) < 1e-2 for r in rep)


def test_branch_points_reproduce_conjugate_points(ellipsoid_curve):
    b = trace_caustic(ellipsoid_curve, 1, 512, 50.0)
    xi, tau, charts, u, v = branch_points(b)
    rng = np.random.default_rng(3)
    surface = ellipsoid_curve.surface
    for i in rng.choice(xi.size, 100, replace=False):
        rec = conjugate_point(surface, tangent_geodesic_seed(ellipsoid_curve, xi[i]), 1)
        assert rec.tau == pytest.approx(tau[i], abs=1e-8)
        d = local_distance(surface, np.array([charts[i]]), np.array([u[i]]), np.array([v[i]]),
                           np.array([rec.point.chart]), np.array([rec.point.u]),
                           np.array([rec.point.v]))[0]
        assert d < 1e-8


def test_branch_tau_sign_and_continuity(ellipsoid_curve):
    for p in (1, -1, 2):
        b = trace_caustic(ellipsoid_curve, p, 512, 50.0)
        for comp in b.components:
            assert np.all(np.sign(comp.tau) == np.sign(p))
            step = np.diff(comp.xi)
            slope = np.max(np.abs(np.diff(comp.tau) / step))
            assert np.all(np.abs(np.diff(comp.tau)) < 10 * step * slope + 1e-12)


@pytest.mark.parametrize("name", ["latitude_circle", "ellipsoid_curve"])
def test_orientation_reversal_swaps_branches(request, name):
    c = request.getfixturevalue(name)
    for p in (1, 2):
        a = trace_caustic(c.reversed(), p, 512, 50.0)
        b = trace_caustic(c, -p, 512, 50.0)
        assert hausdorff_distance(c.surface, a.polylines(), b.polylines()) < 1e-6


def test_sphere_periodicity(latitude_circle):
    s = latitude_circle.surface
    for p in (1, -1, 2):
        a = trace_caustic(latitude_circle, p, 256, 50.0)
        b = trace_caustic(latitude_circle, p + 2 if p > 0 else p - 2, 256, 50.0)
        assert hausdorff_distance(s, a.polylines(), b.polylines()) < 1e-6


def test_coincident_branches_on_sphere(sphere_decomposition):
    # Sigma_{p+2} runs along Sigma_p: reported as coincident, not as tangency points
    cands = find_self_tangencies(sphere_decomposition)
    pairs = {(c["p"], c["q"]) for c in cands}
    assert {(-2, 0), (-1, 1), (0, 2)} <= pairs
    assert all(c["kind"] == "coincident" and c["fraction"] == 1.0 for c in cands)
