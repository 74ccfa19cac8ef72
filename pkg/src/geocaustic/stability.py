"""Stability of tangential caustics under small deformations.

The curve is pushed along its normal by ``lam * b(xi)`` and the metric is
multiplied by ``exp(2 lam f)``; the caustic is retraced and compared with
the unperturbed one through singularity counts, a greedy matching of the
singular points and the Hausdorff distance between the branch images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .caustic import detect_singularities, trace_caustic
from .curve import perturb_curve
from .flow import DEFAULT_TOL
from .pointsets import hausdorff_distance, local_distance
from .surface import conformal_perturbation

__all__ = ["ConvexityError", "StabilityReport", "hausdorff_distance", "check_convexity",
           "default_bumps", "match_singularities", "stability_experiment",
           "stability_sweep", "largest_stable", "DEFAULT_LAMBDAS"]

DEFAULT_LAMBDAS = (1e-4, 1e-3, 1e-2)
MATCH_RADIUS = 20.0
# identical points may differ by rounding after a chart unwrap
MATCH_FLOOR = 1e-12
KINDS = ("cusp", "self-intersection")
CONVEXITY_SAMPLES = 4000


class ConvexityError(ValueError):
    """The surface is not closed with positive curvature at every sample."""

    def __init__(self, message, min_curvature=None):
        super().__init__(message)
        self.min_curvature = min_curvature


@dataclass
class StabilityReport:
    p: int
    lam: float
    base_counts: dict
    pert_counts: dict
    matches: list
    unmatched: list
    hausdorff: float
    verdict: str
    seed: int = 0
    bumps: dict = field(default_factory=dict)

    @property
    def stable(self):
        return self.verdict == "stable"

    def to_dict(self):
        return {"p": self.p, "lambda": self.lam, "seed": self.seed,
                "base_counts": dict(self.base_counts), "pert_counts": dict(self.pert_counts),
                "matches": list(self.matches), "unmatched": list(self.unmatched),
                "hausdorff": self.hausdorff, "verdict": self.verdict, "bumps": self.bumps}

    def rows(self):
        """Flat rows ``(p, lambda, kind, base_count, pert_count, hausdorff, verdict)``."""
        return [(self.p, self.lam, k, self.base_counts.get(k, 0), self.pert_counts.get(k, 0),
                 self.hausdorff, self.verdict) for k in KINDS]


def check_convexity(surface, n=CONVEXITY_SAMPLES, seed=0):
    """Raise :class:`ConvexityError` unless ``surface`` is closed and ``K > 0``
    at ``n`` random sample points; returns the smallest sampled curvature."""
    if not surface.closed:
        raise ConvexityError("surface is not closed", None)
    rng = np.random.default_rng(seed)
    charts, u, v = surface.sample_points(n, rng)
    k_min = math.inf
    for c in np.unique(charts):
        sel = charts == c
        k_min = min(k_min, float(np.min(surface.charts[c].curvature(u[sel], v[sel]))))
    if not k_min > 0:
        raise ConvexityError(f"sampled Gaussian curvature reaches {k_min:.6g} <= 0", k_min)
    return k_min


def default_bumps(seed=0):
    """Curve and metric bump specs drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    curve_bump = {"mode": 3, "phase": float(rng.uniform(0, 2 * math.pi)), "amplitude": 1.0}
    metric_bump = {"m": 3, "phase": float(rng.uniform(0, 2 * math.pi)),
                   "tilt": float(rng.uniform(-0.5, 0.5))}
    return curve_bump, metric_bump


def _location(rec):
    return rec.location.chart, rec.location.u, rec.location.v


def match_singularities(surface, base, pert, radius):
    """Greedy nearest matching of singularities of the same kind.

    Candidate pairs within ``radius`` are taken in order of distance, ties
    broken by the smaller base parameter.  Returns ``(matches, unmatched)``
    where unmatched lists base records without a partner.
    """
    cands = []
    for i, a in enumerate(base):
        for j, b in enumerate(pert):
            if a.kind != b.kind:
                continue
            ca, ua, va = _location(a)
            cb, ub, vb = _location(b)
            d = float(local_distance(surface, np.array([ca]), np.array([ua]), np.array([va]),
                                     np.array([cb]), np.array([ub]), np.array([vb]))[0])
            if d <= max(radius, MATCH_FLOOR):
                cands.append((d, float(a.params[0]), i, j))
    cands.sort()
    used_a, used_b, matches = set(), set(), []
    for d, _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append({"kind": base[i].kind, "base_params": list(base[i].params),
                        "pert_params": list(pert[j].params), "displacement": d})
    unmatched = [{"kind": base[i].kind, "params": list(base[i].params)}
                 for i in range(len(base)) if i not in used_a]
    return matches, unmatched


def _singular(branch, curve):
    recs = detect_singularities(branch, curve)
    return [r for r in recs if r.kind in KINDS]


def stability_experiment(curve, surface=None, p=1, lambda_list=DEFAULT_LAMBDAS, seeds=0,
                         grid_n=512, T_max=50.0, tol=DEFAULT_TOL, jobs=1, curve_bump=None,
                         metric_bump=None, check=True):
    """Perturb curve and metric by each ``lam`` and compare ``Sigma_p``.

    Parameters
    ----------
    curve : RegularCurve
        Closed, arc-length parameterized.
    surface : Surface, optional
        Defaults to ``curve.surface``.
    seeds : int or sequence of int
        Each seed draws one pair of bump shapes (unless given explicitly)
        and runs the whole sweep with it, so the response to ``lam`` is
        along a fixed direction.

    Returns
    -------
    list of StabilityReport, ordered by seed then ``lam``.
    """
    if not curve.closed:
        raise ValueError("the stability experiment needs a closed curve")
    if surface is not None:
        curve = curve.on_surface(surface)
    surface = curve.surface
    if check:
        check_convexity(surface)
    p = int(p)
    seeds = [int(seeds)] if np.isscalar(seeds) else [int(s) for s in seeds]
    base = trace_caustic(curve, p, grid_n, T_max, tol, jobs)
    base_sing = _singular(base, curve)
    base_counts = {k: sum(1 for r in base_sing if r.kind == k) for k in KINDS}
    base_lines = base.polylines()
    reports = []
    for seed in seeds:
        cb, mb = default_bumps(seed)
        cb = curve_bump if curve_bump is not None else cb
        mb = metric_bump if metric_bump is not None else mb
        for lam in lambda_list:
            lam = float(lam)
            if lam < 0:
                raise ValueError("perturbation sizes must be nonnegative")
            surf = conformal_perturbation(surface, lam, mb)
            if check and lam > 0:
                check_convexity(surf)
            pc = perturb_curve(curve.on_surface(surf), lam, cb)
            branch = trace_caustic(pc, p, grid_n, T_max, tol, jobs)
            sing = _singular(branch, pc)
            counts = {k: sum(1 for r in sing if r.kind == k) for k in KINDS}
            matches, unmatched = match_singularities(surface, base_sing, sing,
                                                     MATCH_RADIUS * lam)
            lines = branch.polylines()
            if lines and base_lines:
                h = hausdorff_distance(surface, base_lines, lines)
            else:
                h = 0.0 if not lines and not base_lines else math.inf
            if counts != base_counts:
                verdict = "count-changed"
            elif unmatched:
                verdict = "unmatched"
            else:
                verdict = "stable"
            reports.append(StabilityReport(p, lam, base_counts, counts, matches, unmatched,
                                           h, verdict, seed, {"curve": cb, "metric": mb}))
    return reports


def largest_stable(reports):
    """Largest ``lam`` with verdict stable such that every smaller tested
    ``lam`` is stable too; ``None`` if the smallest already fails."""
    best = None
    for r in sorted(reports, key=lambda r: r.lam):
        if not r.stable:
            break
        best = r.lam
    return best


def stability_sweep(curve, p_values=(1, 2, 3), lambda_list=DEFAULT_LAMBDAS, seeds=0, **kw):
    """Run :func:`stability_experiment` for each order; returns
    ``({p: reports}, {p: largest stable lam})``."""
    out, thresholds = {}, {}
    for p in p_values:
        out[int(p)] = stability_experiment(curve, p=p, lambda_list=lambda_list, seeds=seeds,
                                           **kw)
        thresholds[int(p)] = largest_stable(out[int(p)])
    return out, thresholds
