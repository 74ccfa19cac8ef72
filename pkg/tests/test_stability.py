import math

import numpy as np
import pytest

from geocaustic.caustic import SingularityRecord
from geocaustic.stability import (ConvexityError, StabilityReport, check_convexity,
                                  default_bumps, largest_stable, match_singularities,
                                  stability_experiment, stability_sweep)
from geocaustic.surface import ChartPoint, conformal_perturbation

from conftest import load_fixture_curve


@pytest.fixture(scope="module")
def sphere_sweep(latitude_circle):
    return stability_sweep(latitude_circle, p_values=(1, 2, 3),
                           lambda_list=[0.0, 1e-4, 1e-3, 1e-2], grid_n=256)


def test_zero_perturbation_reproduces_base(sphere_sweep):
    for reports in sphere_sweep[0].values():
        r0 = reports[0]
        assert r0.lam == 0.0 and r0.verdict == "stable"
        assert r0.hausdorff == 0.0
        assert all(m["displacement"] == 0.0 for m in r0.matches)


def test_sphere_latitude_stable_at_small_lambda(sphere_sweep):
    r = [r for r in sphere_sweep[0][1] if r.lam == 1e-3][0]
    assert r.verdict == "stable"
    assert r.hausdorff <= 10 * r.lam


def test_hausdorff_monotone_in_lambda(sphere_sweep):
    for reports in sphere_sweep[0].values():
        h = [r.hausdorff for r in sorted(reports, key=lambda r: r.lam)]
        assert all(a <= b for a, b in zip(h, h[1:]))


def test_per_order_thresholds_reported(sphere_sweep):
    reports, thresholds = sphere_sweep
    assert sorted(thresholds) == [1, 2, 3]
    for p, lam in thresholds.items():
        assert lam == largest_stable(reports[p])
        assert lam is not None and lam >= 1e-3


def test_convexity_is_checked(hyperbolic, sphere):
    with pytest.raises(ConvexityError):
        check_convexity(hyperbolic)
    assert check_convexity(sphere) == pytest.approx(1.0, abs=1e-9)
    # a huge conformal factor bends the sphere into negative curvature
    with pytest.raises(ConvexityError) as info:
        check_convexity(conformal_perturbation(sphere, 3.0, {"m": 3}))
    assert info.value.min_curvature <= 0


def test_hyperbolic_curve_rejected():
    c = load_fixture_curve("hyperbolic_circle.json")
    with pytest.raises(ConvexityError):
        stability_experiment(c, lambda_list=[1e-3])


def test_open_curve_rejected(ellipsoid_curve):
    with pytest.raises(ValueError):
        stability_experiment(ellipsoid_curve, lambda_list=[1e-3])


def _rec(kind, xi, u, v):
    return SingularityRecord(kind, 1, ChartPoint(0, u, v), (xi,))


def test_matching_is_greedy_by_distance(plane):
    base = [_rec("cusp", 0.0, 0.0, 0.0), _rec("cusp", 1.0, 1.0, 0.0),
            _rec("self-intersection", 2.0, 5.0, 5.0)]
    pert = [_rec("cusp", 0.1, 0.9, 0.0), _rec("cusp", 0.2, 0.05, 0.0)]
    matches, unmatched = match_singularities(plane, base, pert, radius=0.2)
    assert [(m["base_params"][0], m["pert_params"][0]) for m in matches] == [(0.0, 0.2),
                                                                             (1.0, 0.1)]
    assert [m["displacement"] for m in matches] == pytest.approx([0.05, 0.1])
    assert unmatched == [{"kind": "self-intersection", "params": [2.0]}]


def test_matching_ties_prefer_smaller_parameter(plane):
    base = [_rec("cusp", 0.7, 1.0, 0.0), _rec("cusp", 0.3, -1.0, 0.0)]
    pert = [_rec("cusp", 0.5, 0.0, 0.0)]
    matches, unmatched = match_singularities(plane, base, pert, radius=2.0)
    assert matches[0]["base_params"] == [0.3]
    assert unmatched == [{"kind": "cusp", "params": [0.7]}]


def test_matching_radius_and_kind(plane):
    base = [_rec("cusp", 0.0, 0.0, 0.0)]
    assert match_singularities(plane, base, [_rec("cusp", 0.0, 0.5, 0.0)], 0.1)[0] == []
    assert match_singularities(plane, base, [_rec("self-intersection", 0.0, 0.0, 0.0)],
                               0.1)[0] == []


def test_default_bumps_are_reproducible():
    assert default_bumps(7) == default_bumps(7)
    cb, mb = default_bumps(0)
    assert 0 <= cb["phase"] < 2 * math.pi and abs(mb["tilt"]) <= 0.5


def test_report_rows_and_largest_stable():
    counts = {"cusp": 4, "self-intersection": 2}
    reps = [StabilityReport(1, lam, counts, counts, [], [], lam, v)
            for lam, v in ((1e-4, "stable"), (1e-3, "stable"), (1e-2, "count-changed"))]
    assert largest_stable(reps) == 1e-3
    assert largest_stable(reps[2:]) is None
    rows = reps[0].rows()
    assert rows == [(1, 1e-4, "cusp", 4, 4, 1e-4, "stable"),
                    (1, 1e-4, "self-intersection", 2, 2, 1e-4, "stable")]
    d = reps[2].to_dict()
    assert d["verdict"] == "count-changed" and not reps[2].stable
    assert np.isfinite(d["hausdorff"])
