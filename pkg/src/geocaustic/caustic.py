"""Tangential caustics, their singularities and the geodesic envelope.

For a unit-speed curve ``gamma`` the tangent geodesic at ``xi`` is
``Gamma_xi``; ``tau_p(xi)`` is the arc length to its ``p``-th conjugate point
(negative ``p`` follows ``-gamma'``) and ``phi_p(xi) = Gamma_xi(tau_p(xi))``
traces the ``p``-th tangential caustic.  The envelope of the family of tangent
geodesics is the curve, the geodesics tangent at inflections, and the
caustics; :func:`verify_theorem1` checks this against intersections of
neighbouring geodesics computed independently (:func:`naif_envelope`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .curve import find_inflections, tangent_geodesic_seed
from .flow import DEFAULT_TOL, GeodesicPath, conjugate_batch, initial_state, shoot
from .integrator import LEFT_ATLAS, OK, TOLERANCE, IntegrationError, bracketed_root, march
from .parallel import chunk_slices, run_chunks
from .pointsets import (CloudIndex, PointCloud, Polyline, PolylineIndex, hausdorff_distance,
                        local_distance, metric_arrays, relative_coordinates)
from .surface import ChartPoint

P_AUTO_CAP = 64
ENDPOINT_TOL = 1e-6
FD_XI = 1e-4
SELF_INTERSECTION_SEPARATION = 10
# a bisected interval of pair offsets must shrink its crossing gap by this factor
SHRINK = 0.8
# relative offset width down to which straddling intervals are always split
COARSE_WIDTH = 1e-3
# crossing spacing along inflectional geodesics, relative to the verification tol
SPACING_FRACTION = 0.9
TRANSVERSAL_ANGLE = 1e-3
REASONS = {OK: "horizon", LEFT_ATLAS: "left-atlas", TOLERANCE: "tolerance-failure"}


# -- data ------------------------------------------------------------------------

@dataclass
class SingularityRecord:
    kind: str  # "cusp" | "self-intersection" | "inflection"
    p: int
    location: ChartPoint
    params: tuple
    diagnostics: dict = field(default_factory=dict)
    degenerate: bool = False

    def to_dict(self):
        return {"kind": self.kind, "p": self.p,
                "location": {"chart": self.location.chart, "u": self.location.u,
                             "v": self.location.v},
                "params": [float(x) for x in self.params],
                "degenerate": self.degenerate,
                "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()}}


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    return x


@dataclass
class BranchComponent:
    """A maximal run of grid parameters where ``phi_p`` is defined.

    ``lower`` / ``upper`` are the refined ends of the domain interval (open
    ends of ``I_p``); ``None`` where the run reaches the end of the curve's
    parameter range.  ``closed`` marks a component covering a whole closed
    curve.
    """

    xi: np.ndarray
    tau: np.ndarray
    charts: np.ndarray
    u: np.ndarray
    v: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    degenerate: np.ndarray
    closed: bool = False
    lower: float | None = None
    upper: float | None = None
    lower_reason: str | None = None
    upper_reason: str | None = None

    def __len__(self):
        return self.xi.size

    def interval(self):
        lo = self.lower if self.lower is not None else float(self.xi[0])
        hi = self.upper if self.upper is not None else float(self.xi[-1])
        return (lo, hi)

    def polyline(self, p=None):
        return Polyline(self.charts, self.u, self.v, self.closed, tag=p)


@dataclass
class CausticBranch:
    p: int
    components: list
    grid_n: int
    T_max: float
    xi_range: tuple
    closed_curve: bool
    singularities: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    @property
    def empty(self):
        return not any(len(c) for c in self.components)

    @property
    def horizon_hit(self):
        return bool(self.failures.get("horizon"))

    def domain(self):
        """Domain intervals; a component covering a closed curve spans its whole
        parameter range."""
        return [tuple(self.xi_range) if c.closed else c.interval()
                for c in self.components if len(c)]

    def polylines(self):
        return [c.polyline(self.p) for c in self.components if len(c)]

    def rows(self):
        for c in self.components:
            for i in range(len(c)):
                yield (float(c.xi[i]), float(c.tau[i]), float(c.u[i]), float(c.v[i]),
                       int(c.charts[i]))

    def count(self, kind):
        return sum(1 for s in self.singularities if s.kind == kind)

    def n_samples(self):
        return sum(len(c) for c in self.components)


@dataclass
class InflectionalGeodesic:
    xi: float
    path: GeodesicPath
    t: np.ndarray
    charts: np.ndarray
    u: np.ndarray
    v: np.ndarray
    truncated: bool = False

    def polyline(self):
        return Polyline(self.charts, self.u, self.v, False, tag="inflectional")


@dataclass
class EnvelopeDecomposition:
    curve: object
    inflections: list
    inflectional_geodesics: list
    branches: dict
    grid_n: int
    T_max: float
    p_range: list
    self_tangencies: list = field(default_factory=list)

    @property
    def truncated(self):
        return any(b.horizon_hit for p, b in self.branches.items() if p != 0) or any(
            g.truncated for g in self.inflectional_geodesics)

    def polylines(self):
        out = []
        for p in sorted(self.branches):
            out.extend(self.branches[p].polylines())
        out.extend(g.polyline() for g in self.inflectional_geodesics)
        return out


# -- evaluation of phi_p at arbitrary parameters -----------------------------------

class Evaluator:
    """Fresh evaluation of conjugate points for the tangent geodesics of a curve."""

    def __init__(self, curve, T_max, tol=DEFAULT_TOL):
        self.curve = curve
        self.T_max = float(T_max)
        self.tol = tol

    @property
    def surface(self):
        return self.curve.surface

    def batch(self, xi, p_max, sign):
        charts, u, v, du, dv = self.curve.seeds(xi)
        if sign < 0:
            du, dv = -du, -dv
        return conjugate_batch(self.surface, charts, u, v, du, dv, p_max, self.T_max, self.tol)

    def phi(self, xi, p):
        """Caustic points ``phi_p(xi)``; rows with ``ok == False`` are undefined."""
        xi = np.atleast_1d(np.asarray(xi, float))
        b = self.batch(xi, abs(p), np.sign(p))
        k = abs(p) - 1
        ok = b.count >= abs(p)
        st = b.states[:, k]
        return {"ok": ok, "tau": np.sign(p) * b.tau[:, k], "charts": b.charts[:, k],
                "u": st[:, 0], "v": st[:, 1], "du": st[:, 2], "dv": st[:, 3]}


class SplineEvaluator:
    """Stand-in for :class:`Evaluator` on a branch known only by samples."""

    def __init__(self, surface, branch):
        self.surface = surface
        comp = max(branch.components, key=len)
        self.chart = int(comp.charts[0])
        u, v = relative_coordinates(surface, self.chart, comp.u[0], comp.charts, comp.u, comp.v)
        period = surface.charts[self.chart].u_period
        if period:
            u = np.unwrap(u, period=period)
        bc = "periodic" if comp.closed else "not-a-knot"
        xs = comp.xi
        if comp.closed:
            step = xs[1] - xs[0]
            xs = np.append(xs, xs[-1] + step)
            u = np.append(u, u[0])
            v = np.append(v, v[0])
        self._u = CubicSpline(xs, u, bc_type=bc)
        self._v = CubicSpline(xs, v, bc_type=bc)

    def phi(self, xi, p):
        xi = np.atleast_1d(np.asarray(xi, float))
        u, v = self._u(xi), self._v(xi)
        du, dv = self._u(xi, 1), self._v(xi, 1)
        return {"ok": np.ones(xi.size, bool), "tau": np.zeros(xi.size),
                "charts": np.full(xi.size, self.chart), "u": u, "v": v, "du": du, "dv": dv}


# -- tracing -----------------------------------------------------------------------

def _grid_batches(curve, xi, p_max, sign, T_max, tol, jobs):
    ev = Evaluator(curve, T_max, tol)
    slices = chunk_slices(xi.size)

    def task(i):
        b = ev.batch(xi[slices[i]], p_max, sign)
        return b.tau, b.states, b.charts, b.degenerate, b.count, b.status

    parts = run_chunks(task, len(slices), jobs)
    return [np.concatenate([part[j] for part in parts]) for j in range(6)]


def _components(ok, closed):
    """Runs of True in ``ok`` as (start, stop) index pairs; wrap-around merged."""
    n = ok.size
    runs = []
    i = 0
    while i < n:
        if ok[i]:
            j = i
            while j + 1 < n and ok[j + 1]:
                j += 1
            runs.append((i, j + 1))
            i = j + 1
        else:
            i += 1
    if closed and len(runs) > 1 and runs[0][0] == 0 and runs[-1][1] == n:
        first = runs.pop(0)
        last = runs.pop()
        runs.append((last[0], n + first[1]))
    return runs


def trace_all(curve, p_values="auto", grid_n=512, T_max=50.0, tol=DEFAULT_TOL, jobs=1,
              refine=True):
    """Trace caustic branches for several orders with one march per direction.

    ``p_values`` is a list of orders or ``"auto"`` (every order that occurs
    within ``T_max``, up to ``P_AUTO_CAP`` each way).  Returns ``{p: branch}``.
    """
    if grid_n < 16:
        raise ValueError("grid_n too small")
    xi = curve.grid(grid_n)
    n = xi.size
    auto = isinstance(p_values, str)
    wanted = [] if auto else sorted(set(int(p) for p in p_values))
    branches = {}
    if auto or 0 in wanted:
        branches[0] = curve_branch(curve, grid_n, T_max)
    pending = []  # endpoint refinement jobs
    for sign in (1, -1):
        orders = [abs(p) for p in wanted if np.sign(p) == sign]
        if not auto and not orders:
            continue
        p_max = P_AUTO_CAP if auto else max(orders)
        tau, states, charts, degen, count, status = _grid_batches(curve, xi, p_max, sign,
                                                                  T_max, tol, jobs)
        if auto:
            top = int(count.max()) if count.size else 0
            # on a closed surface a missing first order means the horizon is too short
            orders = list(range(1, max(top, int(curve.surface.closed)) + 1))
        for k in orders:
            ok = count >= k
            runs = _components(ok, curve.closed)
            comps = []
            for start, stop in runs:
                idx = np.arange(start, stop) % n
                xs = xi[idx] + curve.period * (np.arange(start, stop) >= n)
                comp = BranchComponent(
                    xs, sign * tau[idx, k - 1], charts[idx, k - 1].copy(),
                    states[idx, k - 1, 0].copy(), states[idx, k - 1, 1].copy(),
                    states[idx, k - 1, 2].copy(), states[idx, k - 1, 3].copy(),
                    degen[idx, k - 1].copy(),
                    closed=curve.closed and stop - start == n)
                if not comp.closed:
                    for end, nb in (("lower", start - 1), ("upper", stop)):
                        if nb < 0 or nb >= n:
                            if not curve.closed:
                                continue
                            nb %= n
                        reason = REASONS[int(status[nb])] if count[nb] < k else "unknown"
                        setattr(comp, end + "_reason", reason)
                        inside = xs[0] if end == "lower" else xs[-1]
                        outside = inside + (xi[1] - xi[0]) * (-1 if end == "lower" else 1)
                        pending.append((sign * k, comp, end, inside, outside))
                comps.append(comp)
            fails = ~ok
            failures = {
                "horizon": [float(x) for x in xi[fails & (status == OK)]],
                "left-atlas": [float(x) for x in xi[fails & (status == LEFT_ATLAS)]],
                "tolerance-failure": [float(x) for x in xi[fails & (status == TOLERANCE)]],
            }
            branches[sign * k] = CausticBranch(sign * k, comps, grid_n, T_max, curve.xi_range,
                                               curve.closed, failures=failures)
    if refine and pending:
        _refine_endpoints(curve, pending, T_max, tol)
    if not auto:
        for p in wanted:
            if p not in branches:
                branches[p] = CausticBranch(p, [], grid_n, T_max, curve.xi_range, curve.closed)
    return branches


def _refine_endpoints(curve, pending, T_max, tol):
    """Bisect between the last defined and first undefined grid parameter."""
    ev = Evaluator(curve, T_max, tol)
    for sign in (1, -1):
        jobs = [j for j in pending if np.sign(j[0]) == sign]
        if not jobs:
            continue
        orders = np.array([abs(j[0]) for j in jobs])
        good = np.array([j[3] for j in jobs], float)
        bad = np.array([j[4] for j in jobs], float)
        while np.max(np.abs(good - bad)) > ENDPOINT_TOL:
            mid = 0.5 * (good + bad)
            b = ev.batch(mid, int(orders.max()), sign)
            ok = b.count >= orders
            good = np.where(ok, mid, good)
            bad = np.where(ok, bad, mid)
        for j, g, bd in zip(jobs, good, bad):
            setattr(j[1], j[2], float(0.5 * (g + bd)))


def curve_branch(curve, grid_n, T_max):
    """The curve itself as the order-0 branch."""
    xi = curve.grid(grid_n)
    u, v, du, dv, _, _ = curve.jet(xi)
    comp = BranchComponent(xi, np.zeros(xi.size), np.full(xi.size, curve.chart), u, v, du, dv,
                           np.zeros(xi.size, bool), closed=curve.closed)
    return CausticBranch(0, [comp], grid_n, T_max, curve.xi_range, curve.closed)


def trace_caustic(curve, p, grid_n=512, T_max=50.0, tol=DEFAULT_TOL, jobs=1):
    """The ``p``-th tangential caustic sampled on a uniform grid of ``xi``."""
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    p = int(p)
    if p == 0:
        return curve_branch(curve, grid_n, T_max)
    return trace_all(curve, [p], grid_n, T_max, tol, jobs)[p]


@dataclass
class DomainReport:
    domains: dict
    nested: bool
    violations: list


def caustic_domains(curve, p_range, T_max=50.0, grid_n=512, tol=DEFAULT_TOL, jobs=1,
                    branches=None):
    """Domains ``I_p`` as interval lists, with the nesting ``I_{p+1} in I_p`` checked."""
    if branches is None:
        branches = trace_all(curve, list(p_range), grid_n, T_max, tol, jobs)
    domains = {}
    for p in sorted(set(int(q) for q in p_range)):
        if p == 0:
            domains[0] = [tuple(curve.xi_range)]
        else:
            domains[p] = branches[p].domain()
    violations = []
    for p in sorted(domains):
        inner = p + 1 if p >= 0 else p - 1
        if inner not in domains:
            continue
        for lo, hi in domains[inner]:
            if not any(a <= lo and hi <= b for a, b in domains[p]) and not _inside_wrapped(
                    curve, (lo, hi), domains[p]):
                violations.append({"p": inner, "interval": [lo, hi], "outer": p})
    return DomainReport(domains, not violations, violations)


def _inside_wrapped(curve, interval, outer):
    if not curve.closed:
        return False
    per = curve.period
    lo, hi = interval
    return any(a <= lo + s and hi + s <= b for a, b in outer for s in (-per, per))


# -- local geometry of sampled branches ----------------------------------------------

def christoffel_arrays(surface, charts, u, v):
    out = [np.empty(np.shape(u)) for _ in range(6)]
    for c in np.unique(charts):
        sel = charts == c
        for o, g in zip(out, surface.charts[c].christoffel(u[sel], v[sel])):
            o[sel] = g
    return out


def branch_jets(surface, comp):
    """Finite-difference derivatives of a sampled component in each sample's chart.

    Returns a dict with ``speed``, ``signed`` (component of ``phi'`` along the
    geodesic velocity), ``kg`` (geodesic curvature of the branch) and
    ``valid`` (interior samples).
    """
    n = len(comp)
    idx = np.arange(n)
    if comp.closed:
        im, ip = (idx - 1) % n, (idx + 1) % n
        valid = np.ones(n, bool)
    else:
        im, ip = np.maximum(idx - 1, 0), np.minimum(idx + 1, n - 1)
        valid = (idx > 0) & (idx < n - 1)
    h = (comp.xi[-1] - comp.xi[0]) / (n - 1) if n > 1 else 1.0
    c, u, v = comp.charts, comp.u, comp.v
    um, vm = relative_coordinates(surface, c, u, c[im], u[im], v[im])
    up, vp = relative_coordinates(surface, c, u, c[ip], u[ip], v[ip])
    d1u, d1v = (up - um) / (2 * h), (vp - vm) / (2 * h)
    d2u, d2v = (up - 2 * u + um) / h**2, (vp - 2 * v + vm) / h**2
    E, F, G = metric_arrays(surface, c, u, v)
    G111, G112, G122, G211, G212, G222 = christoffel_arrays(surface, c, u, v)
    Au = d2u + G111 * d1u**2 + 2 * G112 * d1u * d1v + G122 * d1v**2
    Av = d2v + G211 * d1u**2 + 2 * G212 * d1u * d1v + G222 * d1v**2
    speed = np.sqrt(E * d1u**2 + 2 * F * d1u * d1v + G * d1v**2)
    signed = E * d1u * comp.du + F * (d1u * comp.dv + d1v * comp.du) + G * d1v * comp.dv
    with np.errstate(divide="ignore", invalid="ignore"):
        kg = np.sqrt(E * G - F * F) * (d1u * Av - d1v * Au) / speed**3
    return {"speed": speed, "signed": signed, "kg": kg, "valid": valid, "h": h}


def _phi_jet(evaluator, xi, p, delta=FD_XI):
    """Point, first and second derivative of ``phi_p`` at ``xi`` by central
    differences of fresh evaluations (one batch)."""
    xi = np.atleast_1d(np.asarray(xi, float))
    m = xi.size
    r = evaluator.phi(np.concatenate([xi, xi - delta, xi + delta]), p)
    c, u, v = r["charts"][:m], r["u"][:m], r["v"][:m]
    um, vm = relative_coordinates(evaluator.surface, c, u, r["charts"][m:2 * m],
                                  r["u"][m:2 * m], r["v"][m:2 * m])
    up, vp = relative_coordinates(evaluator.surface, c, u, r["charts"][2 * m:],
                                  r["u"][2 * m:], r["v"][2 * m:])
    ok = r["ok"][:m] & r["ok"][m:2 * m] & r["ok"][2 * m:]
    return {"ok": ok, "charts": c, "u": u, "v": v,
            "du": r["du"][:m], "dv": r["dv"][:m],
            "d1": ((up - um) / (2 * delta), (vp - vm) / (2 * delta)),
            "d2": ((up - 2 * u + um) / delta**2, (vp - 2 * v + vm) / delta**2)}


def _signed_speed(evaluator, xi, p):
    j = _phi_jet(evaluator, xi, p)
    E, F, G = metric_arrays(evaluator.surface, j["charts"], j["u"], j["v"])
    a, b = j["d1"]
    val = E * a * j["du"] + F * (a * j["dv"] + b * j["du"]) + G * b * j["dv"]
    return np.where(j["ok"], val, np.nan), j


def _gnorm(E, F, G, a, b):
    return np.sqrt(np.maximum(E * a * a + 2 * F * a * b + G * b * b, 0.0))


# -- singularities -------------------------------------------------------------------

def detect_singularities(branch, curve=None, cusp_tol=1e-3, fit_tol=1e-2, evaluator=None,
                         surface=None):
    """Cusps, self-intersections and inflections of a sampled branch.

    ``curve`` (or an explicit ``evaluator``) allows re-evaluating ``phi_p``
    off the grid for refinement; without one the samples are splined.
    ``cusp_tol`` is relative to the median branch speed; ``fit_tol`` bounds
    the relative residual of the local semicubic fit.
    """
    if branch.empty:
        return []
    if evaluator is None:
        if curve is not None:
            evaluator = Evaluator(curve, branch.T_max)
            surface = curve.surface
        else:
            if surface is None:
                raise ValueError("need a curve, an evaluator or a surface")
            evaluator = SplineEvaluator(surface, branch)
    surface = evaluator.surface
    records = []
    jets = [branch_jets(surface, c) if len(c) >= 5 else None for c in branch.components]
    speeds = np.concatenate([j["speed"][j["valid"]] for j in jets if j is not None] or [[1.0]])
    median = float(np.median(speeds)) if speeds.size else 1.0
    if branch.p != 0:
        records += _cusps(branch, jets, evaluator, cusp_tol * median, fit_tol)
    records += _self_intersections(branch, evaluator)
    records += _branch_inflections(branch, jets, records, median)
    branch.singularities = records
    return records


def _cusps(branch, jets, ev, speed_tol, fit_tol):
    p = branch.p
    lo_list, hi_list, flo, fhi = [], [], [], []
    for comp, jet in zip(branch.components, jets):
        if jet is None:
            continue
        s = jet["signed"]
        n = len(comp)
        last = n if comp.closed else n - 1
        for i in range(last):
            k = (i + 1) % n
            if not (jet["valid"][i] and jet["valid"][k]):
                continue
            if s[i] == 0 or np.sign(s[i]) != np.sign(s[k]):
                x0 = comp.xi[i]
                x1 = comp.xi[k] + (branch.xi_range[1] - branch.xi_range[0]) * (k < i)
                lo_list.append(x0)
                hi_list.append(x1)
                flo.append(s[i])
                fhi.append(s[k])
    if not lo_list:
        return []
    lo, hi = np.array(lo_list), np.array(hi_list)
    # refine the sign change of the tangential speed on fresh evaluations
    f_lo, _ = _signed_speed(ev, lo, p)
    f_hi, _ = _signed_speed(ev, hi, p)
    usable = np.isfinite(f_lo) & np.isfinite(f_hi) & (np.sign(f_lo) != np.sign(f_hi))
    roots = np.where(usable, 0.5 * (lo + hi), np.nan)
    if np.any(usable):
        idx = np.flatnonzero(usable)

        def fun(x, active):
            val, _ = _signed_speed(ev, x, p)
            return np.nan_to_num(val)

        roots[idx] = bracketed_root(fun, lo[idx], hi[idx], f_lo[idx], f_hi[idx], 1e-10)
    for j in np.flatnonzero(~usable):
        # no clean sign change: fall back to minimizing the speed
        res = minimize_scalar(lambda x: float(np.nan_to_num(
            np.abs(_signed_speed(ev, [x], p)[0][0]), nan=1e9)),
            bounds=(lo[j], hi[j]), method="bounded", options={"xatol": 1e-10})
        roots[j] = res.x
    jet = _phi_jet(ev, roots, p)
    E, F, G = metric_arrays(ev.surface, jet["charts"], jet["u"], jet["v"])
    speed = _gnorm(E, F, G, *jet["d1"])
    h = (branch.xi_range[1] - branch.xi_range[0]) / branch.grid_n
    fits = _semicubic_fits(ev, roots, p, jet, 3 * h)
    out = []
    for j, x in enumerate(roots):
        if not jet["ok"][j] or not speed[j] < speed_tol:
            continue
        fit = fits[j]
        semicubic = fit["t_a2"] > 1.96 and fit["t_b3"] > 1.96
        degenerate = (not semicubic) or fit["residual"] > fit_tol
        diag = dict(fit)
        diag["speed"] = float(speed[j])
        out.append(SingularityRecord("cusp", p, ChartPoint(int(jet["charts"][j]),
                                                           float(jet["u"][j]), float(jet["v"][j])),
                                     (float(_wrap_xi(branch, x)),), diag, degenerate))
    return out


def _wrap_xi(branch, x):
    if branch.closed_curve:
        a, b = branch.xi_range
        return a + (x - a) % (b - a)
    return x


def _semicubic_fits(ev, roots, p, jet, width):
    """Least-squares fit of ``phi_p(xi_c + s) - phi_p(xi_c)`` in an orthonormal
    frame (geodesic direction, left normal) to quartic polynomials in ``s``.

    A semicubic cusp has a nonzero ``s^2`` term along the tangent and a
    nonzero ``s^3`` term along the normal.
    """
    s = np.linspace(-width, width, 21)
    m = roots.size
    xs = (roots[:, None] + s[None, :]).ravel()
    r = ev.phi(xs, p)
    out = []
    X = np.stack([s, s**2, s**3, s**4], axis=1)
    XtX_inv = np.linalg.inv(X.T @ X)
    for j in range(m):
        sl = slice(21 * j, 21 * (j + 1))
        c, u0, v0 = jet["charts"][j], jet["u"][j], jet["v"][j]
        uu, vv = relative_coordinates(ev.surface, np.full(21, c), np.full(21, u0),
                                      r["charts"][sl], r["u"][sl], r["v"][sl])
        E, F, G = ev.surface.charts[c].metric(u0, v0)
        E, F, G = float(E), float(F), float(G)
        e1u, e1v = jet["du"][j], jet["dv"][j]
        n1 = math.sqrt(E * e1u**2 + 2 * F * e1u * e1v + G * e1v**2)
        e1u, e1v = e1u / n1, e1v / n1
        root = math.sqrt(E * G - F * F)
        e2u, e2v = -(F * e1u + G * e1v) / root, (E * e1u + F * e1v) / root
        du_, dv_ = uu - u0, vv - v0
        x = E * du_ * e1u + F * (du_ * e1v + dv_ * e1u) + G * dv_ * e1v
        y = E * du_ * e2u + F * (du_ * e2v + dv_ * e2u) + G * dv_ * e2v
        ok = r["ok"][sl]
        if ok.sum() < 8:
            out.append({"a2": 0.0, "b3": 0.0, "t_a2": 0.0, "t_b3": 0.0, "residual": np.inf})
            continue
        Xo = X[ok]
        inv = XtX_inv if ok.all() else np.linalg.inv(Xo.T @ Xo)
        ca = inv @ Xo.T @ x[ok]
        cb = inv @ Xo.T @ y[ok]
        ra = x[ok] - Xo @ ca
        rb = y[ok] - Xo @ cb
        dof = max(int(ok.sum()) - 4, 1)
        scale = max(float(np.max(np.hypot(x[ok], y[ok]))), 1e-300)
        floor = (1e-12 * scale) ** 2  # rounding level of the data
        va = max(float(ra @ ra) / dof, floor)
        vb = max(float(rb @ rb) / dof, floor)
        t_a2 = abs(ca[1]) / math.sqrt(va * inv[1, 1])
        t_b3 = abs(cb[2]) / math.sqrt(vb * inv[2, 2])
        resid = math.sqrt((float(ra @ ra) + float(rb @ rb)) / (2 * ok.sum())) / scale
        out.append({"a2": float(ca[1]), "b3": float(cb[2]), "t_a2": float(t_a2),
                    "t_b3": float(t_b3), "residual": float(resid)})
    return out


def _self_intersections(branch, ev):
    surface = ev.surface
    comps = [c for c in branch.components if len(c) >= 2]
    if not comps:
        return []
    charts = np.concatenate([c.charts for c in comps])
    u = np.concatenate([c.u for c in comps])
    v = np.concatenate([c.v for c in comps])
    xi = np.concatenate([c.xi for c in comps])
    comp_id = np.concatenate([np.full(len(c), k) for k, c in enumerate(comps)])
    pos = np.concatenate([np.arange(len(c)) for c in comps])
    sizes = np.array([len(c) for c in comps])
    closed = np.array([c.closed for c in comps])
    offs = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    # segment k runs from vertex k to nxt[k]
    nxt = np.where(pos + 1 < sizes[comp_id], np.arange(xi.size) + 1,
                   np.where(closed[comp_id], offs[comp_id], -1))
    prox = np.atleast_2d(surface.embed(charts, u, v))
    seg_ok = nxt >= 0
    seg_len = np.full(xi.size, 0.0)
    seg_len[seg_ok] = np.linalg.norm(prox[nxt[seg_ok]] - prox[seg_ok], axis=1)
    radius = 2.0 * float(seg_len.max()) if seg_ok.any() else 0.0
    if radius <= 0:
        return []
    tree = cKDTree(prox)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return []
    cand = set()
    for i, j in pairs:
        for a in (i, _prev(i, nxt)):
            for b in (j, _prev(j, nxt)):
                if a < 0 or b < 0 or nxt[a] < 0 or nxt[b] < 0 or a == b:
                    continue
                if comp_id[a] == comp_id[b]:
                    d = abs(int(pos[a]) - int(pos[b]))
                    if closed[comp_id[a]]:
                        d = min(d, sizes[comp_id[a]] - d)
                    if d <= SELF_INTERSECTION_SEPARATION:
                        continue
                cand.add((min(a, b), max(a, b)))
    if not cand:
        return []
    cand = np.array(sorted(cand))
    a, b = cand[:, 0], cand[:, 1]
    # all four endpoints in the chart of segment a's start
    ca, ua = charts[a], u[a]
    pts = []
    for k in (a, nxt[a], b, nxt[b]):
        pu, pv = relative_coordinates(surface, ca, ua, charts[k], u[k], v[k])
        pts.append(np.stack([pu, pv], axis=1))
    A0, A1, B0, B1 = pts
    da, db, w = A1 - A0, B1 - B0, B0 - A0
    den = da[:, 0] * db[:, 1] - da[:, 1] * db[:, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (w[:, 0] * db[:, 1] - w[:, 1] * db[:, 0]) / den
        t = (w[:, 0] * da[:, 1] - w[:, 1] * da[:, 0]) / den
    hit = (den != 0) & (s >= 0) & (s < 1) & (t >= 0) & (t < 1)
    if not np.any(hit):
        return []
    per = branch.xi_range[1] - branch.xi_range[0]
    step = np.diff(xi)

    def seg_xi(k, frac):
        x0 = xi[k]
        x1 = xi[nxt[k]]
        x1 = np.where(x1 < x0, x1 + per, x1)  # closing segment of a closed component
        return x0 + frac * (x1 - x0)

    x1 = seg_xi(a[hit], s[hit])
    x2 = seg_xi(b[hit], t[hit])
    # refine phi(x1) = phi(x2) by Newton on fresh evaluations
    x1, x2, res = _newton_crossing(ev, branch.p, x1, x2)
    spacing = float(np.median(np.abs(step))) if step.size else 1.0
    out = []
    seen = []
    for j in range(x1.size):
        if not np.isfinite(res["residual"][j]):
            continue
        pair = tuple(sorted((float(_wrap_xi(branch, x1[j])), float(_wrap_xi(branch, x2[j])))))
        sep = abs(pair[1] - pair[0])
        if branch.closed_curve:
            sep = min(sep, per - sep)
        if sep <= SELF_INTERSECTION_SEPARATION * spacing:
            continue
        if any(abs(pair[0] - q[0]) < 3 * spacing and abs(pair[1] - q[1]) < 3 * spacing
               for q in seen):
            continue
        seen.append(pair)
        angle = float(res["angle"][j])
        out.append(SingularityRecord(
            "self-intersection", branch.p,
            ChartPoint(int(res["charts"][j]), float(res["u"][j]), float(res["v"][j])),
            pair, {"angle": angle, "residual": float(res["residual"][j])},
            degenerate=angle <= TRANSVERSAL_ANGLE))
    return out


def _prev(i, nxt):
    hit = np.flatnonzero(nxt == i)
    return int(hit[0]) if hit.size else -1


def _newton_crossing(ev, p, x1, x2, iters=8, delta=FD_XI):
    surface = ev.surface
    for _ in range(iters):
        j1 = _phi_jet(ev, x1, p, delta)
        j2 = _phi_jet(ev, x2, p, delta)
        u2, v2 = relative_coordinates(surface, j1["charts"], j1["u"], j2["charts"], j2["u"],
                                      j2["v"])
        # tangents of the second point re-expressed by differencing in chart 1
        fu, fv = j1["u"] - u2, j1["v"] - v2
        a_u, a_v = j1["d1"]
        b_u, b_v = _tangent_in_chart(ev, x2, p, j1["charts"], j1["u"], delta)
        det = -a_u * b_v + a_v * b_u
        with np.errstate(invalid="ignore", divide="ignore"):
            dx1 = (-fu * -b_v - -fv * -b_u) / det
            dx2 = (a_u * -fv - a_v * -fu) / det
        x1 = x1 + np.nan_to_num(dx1)
        x2 = x2 + np.nan_to_num(dx2)
        if np.all(np.abs(np.nan_to_num(dx1)) + np.abs(np.nan_to_num(dx2)) < 1e-13):
            break
    j1 = _phi_jet(ev, x1, p, delta)
    j2 = _phi_jet(ev, x2, p, delta)
    u2, v2 = relative_coordinates(surface, j1["charts"], j1["u"], j2["charts"], j2["u"], j2["v"])
    E, F, G = metric_arrays(surface, j1["charts"], j1["u"], j1["v"])
    resid = _gnorm(E, F, G, j1["u"] - u2, j1["v"] - v2)
    ok = j1["ok"] & j2["ok"]
    a_u, a_v = j1["d1"]
    b_u, b_v = _tangent_in_chart(ev, x2, p, j1["charts"], j1["u"], delta)
    dot = E * a_u * b_u + F * (a_u * b_v + a_v * b_u) + G * a_v * b_v
    cross = np.sqrt(E * G - F * F) * (a_u * b_v - a_v * b_u)
    angle = np.arctan2(np.abs(cross), np.abs(dot))
    return x1, x2, {"residual": np.where(ok, resid, np.nan), "angle": angle,
                    "charts": j1["charts"], "u": j1["u"], "v": j1["v"]}


def _tangent_in_chart(ev, x, p, charts, ref_u, delta):
    r = ev.phi(np.concatenate([x - delta, x + delta]), p)
    m = x.size
    um, vm = relative_coordinates(ev.surface, charts, ref_u, r["charts"][:m], r["u"][:m],
                                  r["v"][:m])
    up, vp = relative_coordinates(ev.surface, charts, ref_u, r["charts"][m:], r["u"][m:],
                                  r["v"][m:])
    return (up - um) / (2 * delta), (vp - vm) / (2 * delta)


def _branch_inflections(branch, jets, found, median):
    cusp_xi = [r.params[0] for r in found if r.kind == "cusp"]
    out = []
    for comp, jet in zip(branch.components, jets):
        if jet is None:
            continue
        k, s, sp_ = jet["kg"], jet["signed"], jet["speed"]
        n = len(comp)
        last = n if comp.closed else n - 1
        h = jet["h"]
        for i in range(last):
            j = (i + 1) % n
            if not (jet["valid"][i] and jet["valid"][j]):
                continue
            if not (np.isfinite(k[i]) and np.isfinite(k[j])):
                continue
            if np.sign(k[i]) == np.sign(k[j]) or k[i] == 0:
                continue
            if branch.p != 0 and np.sign(s[i]) != np.sign(s[j]):
                continue  # a cusp lies between: curvature flips through infinity
            if min(sp_[i], sp_[j]) < 0.05 * median:
                continue
            x = comp.xi[i] + h * k[i] / (k[i] - k[j])
            if any(abs(x - c) < 3 * h for c in cusp_xi):
                continue
            t = k[i] / (k[i] - k[j])
            loc = ChartPoint(int(comp.charts[i]), float(comp.u[i]), float(comp.v[i]))
            out.append(SingularityRecord("inflection", branch.p, loc,
                                         (float(_wrap_xi(branch, x)),),
                                         {"kg_before": float(k[i]), "kg_after": float(k[j]),
                                          "fraction": float(t)}))
    return out


# -- naif envelope ---------------------------------------------------------------------

@dataclass
class NaifCloud:
    """Intersections of neighbouring tangent geodesics.

    ``xi`` is the first parameter of the pair, ``t`` the arc length of the
    crossing along its geodesic; ``source`` is 0 for grid pairs and 1 for
    the extra pairs straddling an inflection.
    """

    points: PointCloud
    xi: np.ndarray
    t: np.ndarray
    source: np.ndarray
    epsilon: float

    def __len__(self):
        return len(self.points)


def _periods(surface, charts):
    per = np.array([ch.u_period or 0.0 for ch in surface.charts])
    return per[charts]


def _side(ya, yb, per):
    du = ya[0] - yb[0]
    du = np.where(per > 0, np.mod(du + per / 2, np.where(per > 0, per, 1.0)) - per / 2, du)
    return du * yb[3] - (ya[1] - yb[1]) * yb[2]


def _pair_crossings(curve, xa, eps, T_max, tol):
    """Crossings of ``Gamma_xa`` and ``Gamma_{xa + eps}`` for ``|t| <= T_max``.

    The second geodesic is started ``eps`` earlier in arc length so both
    members of a pair stay abreast; the pair is integrated with one step
    sequence and a common chart, which keeps their difference accurate even
    when it is many orders of magnitude below the integration tolerance.
    A crossing is a sign change of the cross product of the separation with
    the second geodesic's velocity, refined on the continuous extension.
    """
    surface = curve.surface
    n = xa.size
    if n == 0:
        return np.zeros(0, int), np.zeros(0), np.zeros(0, int), np.zeros(0), np.zeros(0)
    ca, ua, va, dua, dva = curve.seeds(xa)
    cb, ub, vb, dub, dvb = curve.seeds(xa + eps)
    yb = march(surface, initial_state(ub, vb, dub, dvb), cb, -eps, tol)
    y0 = np.concatenate([initial_state(ua, va, dua, dva), yb["y"]], axis=1)
    charts0 = np.concatenate([ca, yb["charts"]])
    leaders = np.concatenate([np.arange(n), np.arange(n)])
    found = {"pair": [], "t": [], "charts": [], "u": [], "v": []}

    def on_step(step):
        pos = np.full(2 * n, -1)
        pos[step.members] = np.arange(step.members.size)
        ia, ib = pos[:n], pos[n:]
        pairs = np.flatnonzero((ia >= 0) & (ib >= 0))
        if pairs.size == 0:
            return None
        ca_, cb_ = ia[pairs], ib[pairs]
        per = _periods(surface, step.charts[ca_])
        s0 = _side(step.y0[:, ca_], step.y0[:, cb_], per)
        s1 = _side(step.y1[:, ca_], step.y1[:, cb_], per)
        hit = (np.sign(s0) != np.sign(s1)) & (s0 != 0) & np.isfinite(s1)
        if not np.any(hit):
            return None
        sel = np.flatnonzero(hit)
        cols_a, cols_b, per_h = ca_[sel], cb_[sel], per[sel]

        def fun(theta, active):
            return _side(step.dense(theta, cols_a[active]), step.dense(theta, cols_b[active]),
                         per_h[active])

        theta = bracketed_root(fun, np.zeros(sel.size), np.ones(sel.size), s0[sel], s1[sel],
                               1e-13 / abs(step.h))
        st = step.dense(theta, cols_a)
        found["pair"].append(pairs[sel])
        found["t"].append(step.t0 + theta * step.h)
        found["charts"].append(step.charts[cols_a])
        found["u"].append(st[0])
        found["v"].append(st[1])
        return None

    for end in (T_max, -T_max):
        march(surface, y0, charts0, end, tol, on_step=on_step, leaders=leaders)
    if not found["t"]:
        return np.zeros(0, int), np.zeros(0), np.zeros(0, int), np.zeros(0), np.zeros(0)
    out = [np.concatenate(found[k]) for k in ("pair", "t", "charts", "u", "v")]
    order = np.lexsort((out[1], out[0]))
    return tuple(x[order] for x in out)


def _run_pairs(curve, xa, eps, T_max, tol, jobs):
    slices = chunk_slices(xa.size)

    def task(i):
        pair, t, c, u, v = _pair_crossings(curve, xa[slices[i]], eps, T_max, tol)
        return pair + slices[i].start, t, c, u, v

    parts = run_chunks(task, len(slices), jobs)
    if not parts:
        return np.zeros(0, int), np.zeros(0), np.zeros(0, int), np.zeros(0), np.zeros(0)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(5))


def _crossing_gap(surface, r1, r2, T_max, spacing):
    """Largest distance between corresponding crossings of two pairs."""
    worst = 0.0
    for sgn in (1, -1):
        a = [k for k in range(r1[0].size) if np.sign(r1[0][k]) == sgn]
        b = [k for k in range(r2[0].size) if np.sign(r2[0][k]) == sgn]
        a.sort(key=lambda k: abs(r1[0][k]))
        b.sort(key=lambda k: abs(r2[0][k]))
        m = min(len(a), len(b))
        for extra, r in ((a[m:], r1), (b[m:], r2)):
            for k in extra:
                if T_max - abs(r[0][k]) > spacing and abs(r[0][k]) > spacing:
                    return math.inf
        if m:
            ia, ib = np.array(a[:m]), np.array(b[:m])
            d = local_distance(surface, r1[1][ia], r1[2][ia], r1[3][ia],
                               r2[1][ib], r2[2][ib], r2[3][ib])
            worst = max(worst, float(d.max()))
    return worst


def _inflection_pairs(curve, xi0, eps, T_max, tol, spacing, jobs, max_rounds=40):
    """Pairs straddling an inflection, refined until their crossings sample the
    inflectional geodesic at least every ``spacing``.

    A pair centred at offset ``c`` from the inflection crosses far out along
    the inflectional geodesic when ``c`` is small (at ``t ~ eps^2 / 12c`` in
    the plane), so the offsets start geometrically spaced and an interval of
    offsets is bisected while its crossings are too far apart.  An interval
    is only split again if the split shrank the gap: where the pair
    separation is at rounding level the crossings jitter and refinement
    would not converge.
    """
    half = 0.5 * eps
    base = half * np.geomspace(1e-10, 1.0, 41)[:-1]
    offsets = sorted(set([0.0] + list(base) + list(-base)))
    results = {}
    parent_gap = {}
    todo = offsets
    for _ in range(max_rounds):
        if todo:
            xa = xi0 + np.array(todo) - half
            pair, t, c, u, v = _run_pairs(curve, xa, eps, T_max, tol, jobs)
            for k, d in enumerate(todo):
                sel = pair == k
                results[d] = (t[sel], c[sel], u[sel], v[sel])
        keys = sorted(results)
        todo = []
        for d1, d2 in zip(keys[:-1], keys[1:]):
            width = d2 - d1
            if width <= 1e-9 * max(abs(d1), abs(d2)) or width < 1e-3 * base[0]:
                continue
            gap = _crossing_gap(curve.surface, results[d1], results[d2], T_max, spacing)
            if gap <= spacing:
                continue
            rel = width / max(abs(d1), abs(d2))
            if rel < 0.25 * spacing / T_max:
                continue
            pg = parent_gap.get((d1, d2))
            if pg is not None and rel < COARSE_WIDTH:
                if math.isinf(gap) and math.isinf(pg):
                    if rel <= 1e-4:
                        continue
                elif not gap <= SHRINK * pg:
                    continue
            mid = math.copysign(math.sqrt(d1 * d2), d1) if d1 * d2 > 0 else 0.5 * (d1 + d2)
            if mid in results:
                continue
            parent_gap[(d1, mid)] = parent_gap[(mid, d2)] = gap
            todo.append(mid)
        if not todo:
            break
    keys = sorted(results)
    xs, ts, cs, us, vs = [], [], [], [], []
    for d in keys:
        t, c, u, v = results[d]
        xs.append(np.full(t.size, xi0 + d - half))
        ts.append(t)
        cs.append(c)
        us.append(u)
        vs.append(v)
    return tuple(np.concatenate(x) if x else np.zeros(0) for x in (xs, ts, cs, us, vs))


def naif_envelope(curve, epsilon=1e-4, grid_n=512, T_max=50.0, tol=DEFAULT_TOL, jobs=1,
                  inflections=None, spacing=1e-3):
    """Crossings of ``Gamma_xi`` and ``Gamma_{xi + epsilon}`` with ``|t| <= T_max``.

    Grid pairs start at every grid parameter.  Around each simple inflection
    extra straddling pairs are added so that the crossings, which there run
    along the whole inflectional geodesic, are sampled every ``spacing``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    xi = curve.grid(grid_n)
    pair, t, c, u, v = _run_pairs(curve, xi, epsilon, T_max, tol, jobs)
    xs, ts, cs, us, vs, src = [xi[pair]], [t], [c], [u], [v], [np.zeros(t.size, int)]
    if inflections is None:
        inflections = find_inflections(curve, max(2048, 4 * grid_n))
    for rec in inflections:
        if rec.kind != "simple":
            continue
        x2, t2, c2, u2, v2 = _inflection_pairs(curve, rec.xi, epsilon, T_max, tol, spacing, jobs)
        xs.append(x2)
        ts.append(t2)
        cs.append(c2.astype(int))
        us.append(u2)
        vs.append(v2)
        src.append(np.ones(t2.size, int))
    pts = PointCloud(np.concatenate(cs).astype(int), np.concatenate(us), np.concatenate(vs))
    return NaifCloud(pts, np.concatenate(xs), np.concatenate(ts), np.concatenate(src),
                     float(epsilon))


# -- envelope assembly and verification -------------------------------------------------

def _clipped_geodesic(surface, seed, T_max, spacing):
    lo, hi, truncated = -T_max, T_max, False
    try:
        path = shoot(surface, seed, (lo, hi))
    except IntegrationError:
        truncated = True
        for side in (1, -1):
            try:
                shoot(surface, seed, (0.0, hi) if side > 0 else (lo, 0.0))
            except IntegrationError as exc:
                reach = 0.999 * (exc.t or 0.0)
                hi, lo = (reach, lo) if side > 0 else (hi, reach)
        path = shoot(surface, seed, (lo, hi))
    n = max(2, int(math.ceil((hi - lo) / spacing)) + 1)
    t = np.linspace(lo, hi, n)
    states = path.sample(t)
    charts = np.array([s[0] for s in states])
    y = np.array([s[1] for s in states])
    return path, t, charts, y[:, 0], y[:, 1], truncated


def assemble_envelope(curve, p_range="auto", T_max=50.0, grid_n=512, tol=DEFAULT_TOL, jobs=1,
                      detect=True, geodesic_spacing=0.01, tangency_tol=1e-3):
    """Curve, inflectional geodesics and tangential caustics of ``curve``.

    ``p_range`` is an iterable of orders or ``"auto"`` for every order
    occurring within ``T_max``; the curve itself (order 0) is always included.
    """
    inflections = find_inflections(curve, max(2048, 4 * grid_n))
    if isinstance(p_range, str):
        branches = trace_all(curve, "auto", grid_n, T_max, tol, jobs)
        orders = sorted(branches)
    else:
        orders = sorted(set(int(p) for p in p_range) | {0})
        branches = trace_all(curve, orders, grid_n, T_max, tol, jobs)
    geos = []
    for rec in inflections:
        seed = tangent_geodesic_seed(curve, rec.xi)
        path, t, c, u, v, trunc = _clipped_geodesic(curve.surface, seed, T_max, geodesic_spacing)
        geos.append(InflectionalGeodesic(rec.xi, path, t, c, u, v, trunc))
    if detect:
        ev_cache = Evaluator(curve, T_max, tol)
        for p in orders:
            if not branches[p].empty:
                detect_singularities(branches[p], curve, evaluator=ev_cache)
    dec = EnvelopeDecomposition(curve, inflections, geos, branches, grid_n, T_max, orders)
    dec.self_tangencies = find_self_tangencies(dec, tangency_tol)
    return dec


def find_self_tangencies(dec, tol=1e-3):
    """Candidate second-order self-tangencies between branches of different order."""
    surface = dec.curve.surface
    out = []
    ps = [p for p in sorted(dec.branches) if not dec.branches[p].empty]
    for i, p in enumerate(ps):
        bp = dec.branches[p]
        index = PolylineIndex(surface, bp.polylines())
        tu = np.concatenate([c.du for c in bp.components if len(c)])
        tv = np.concatenate([c.dv for c in bp.components if len(c)])
        for q in ps[i + 1:]:
            bq = dec.branches[q]
            for comp in bq.components:
                if not len(comp):
                    continue
                d, vert = index.distance(comp.charts, comp.u, comp.v, return_index=True)
                close = d < tol
                if not close.any():
                    continue
                if close.mean() > 0.5:
                    out.append({"p": p, "q": q, "kind": "coincident",
                                "fraction": float(close.mean())})
                    continue
                for start, stop in _components(close, comp.closed):
                    idx = np.arange(start, stop) % len(comp)
                    k = idx[np.argmin(d[idx])]
                    j = vert[k]
                    a = _angle_between(surface, comp.charts[k], comp.u[k], comp.v[k],
                                       comp.du[k], comp.dv[k], index.charts[j], index.u[j],
                                       index.v[j], tu[j], tv[j])
                    if a < TRANSVERSAL_ANGLE:
                        out.append({"p": p, "q": q, "kind": "tangency-candidate",
                                    "xi_q": float(comp.xi[k]), "distance": float(d[k]),
                                    "angle": float(a)})
    return out


def _angle_between(surface, c1, u1, v1, a_u, a_v, c2, u2, v2, b_u, b_v):
    if c1 != c2:
        _, _, b_u, b_v = surface.transfer(np.array([c2]), np.array([c1]), np.array([u2]),
                                          np.array([v2]), np.array([b_u]), np.array([b_v]))
        b_u, b_v = float(b_u[0]), float(b_v[0])
    E, F, G = (float(x) for x in surface.charts[c1].metric(u1, v1))
    dot = E * a_u * b_u + F * (a_u * b_v + a_v * b_u) + G * a_v * b_v
    cross = math.sqrt(E * G - F * F) * (a_u * b_v - a_v * b_u)
    return math.atan2(abs(cross), abs(dot))


@dataclass
class Theorem1Report:
    coverage: float
    membership: float
    inflectional_coverage: list
    n_cloud: int
    n_samples: int
    tol: float
    epsilon: float
    truncated: bool
    coverage_offenders: list
    membership_offenders: list

    def passed(self, threshold=0.99):
        infl_ok = all(f >= threshold for f in self.inflectional_coverage)
        return self.coverage >= threshold and self.membership >= threshold and infl_ok

    def to_dict(self):
        return {"coverage": self.coverage, "membership": self.membership,
                "inflectional_coverage": list(self.inflectional_coverage),
                "n_cloud": self.n_cloud, "n_samples": self.n_samples, "tol": self.tol,
                "epsilon": self.epsilon, "truncated": self.truncated,
                "coverage_offenders": self.coverage_offenders,
                "membership_offenders": self.membership_offenders}


def verify_theorem1(curve, decomposition, epsilon=1e-4, tol=1e-3, jobs=1, cloud=None,
                    n_offenders=10):
    """Two-sided comparison of the decomposition with the naif envelope.

    Coverage is the fraction of naif points within ``tol`` of the
    decomposition; membership the fraction of decomposition samples (branch
    samples including the curve, and inflectional geodesic samples) with a
    naif point within ``tol``.
    """
    dec = decomposition
    surface = curve.surface
    if cloud is None:
        cloud = naif_envelope(curve, epsilon, dec.grid_n, dec.T_max, jobs=jobs,
                              inflections=dec.inflections, spacing=SPACING_FRACTION * tol)
    lines = dec.polylines()
    pts = cloud.points
    if len(pts):
        index = PolylineIndex(surface, lines)
        d_cov = index.distance(pts.charts, pts.u, pts.v)
        coverage = float(np.mean(d_cov <= tol))
    else:
        d_cov = np.zeros(0)
        coverage = 1.0
    cidx = CloudIndex(surface, pts)
    samples = []
    for p in sorted(dec.branches):
        for comp in dec.branches[p].components:
            if len(comp):
                samples.append((("branch", p), comp.xi, comp.charts, comp.u, comp.v))
    for g in dec.inflectional_geodesics:
        samples.append((("inflectional", g.xi), g.t, g.charts, g.u, g.v))
    d_mem = []
    infl = []
    labels = []
    for tag, par, c, u, v in samples:
        d = cidx.distance(c, u, v)
        d_mem.append(d)
        labels.extend((tag, float(x)) for x in par)
        if tag[0] == "inflectional":
            infl.append(float(np.mean(d <= tol)))
    d_mem = np.concatenate(d_mem) if d_mem else np.zeros(0)
    membership = float(np.mean(d_mem <= tol)) if d_mem.size else 1.0
    cov_off = []
    for k in np.argsort(-d_cov, kind="stable")[:n_offenders]:
        if d_cov[k] <= tol:
            break
        cov_off.append({"xi": float(cloud.xi[k]), "t": float(cloud.t[k]),
                        "source": int(cloud.source[k]), "distance": float(d_cov[k]),
                        "chart": int(pts.charts[k]), "u": float(pts.u[k]), "v": float(pts.v[k])})
    mem_off = []
    for k in np.argsort(-d_mem, kind="stable")[:n_offenders]:
        if d_mem[k] <= tol:
            break
        (kind, which), par = labels[k]
        mem_off.append({"kind": kind, "which": which, "param": par,
                        "distance": float(d_mem[k])})
    return Theorem1Report(coverage, membership, infl, len(pts), int(d_mem.size), tol, epsilon,
                          dec.truncated, cov_off, mem_off)


# -- cross-checks -----------------------------------------------------------------------

def pencil_caustic_crosscheck(curve, p, grid_n=400, T_max=50.0, fan_width=0.05, fan_n=11,
                              delta=1e-4, tol=DEFAULT_TOL, jobs=1, branches=None):
    """Compare ``Sigma_p u Sigma_-p`` with the envelope of the point caustics.

    For each grid point of the curve the ``|p|``-th conjugate locus over a
    fan of directions around ``+-gamma'`` is computed at ``xi`` and
    ``xi + delta``; the envelope is where the finite difference in ``xi`` is
    parallel to the locus.  When the locus degenerates to a point (constant
    curvature focusing) the whole fan is kept.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    surface = curve.surface
    xi = curve.grid(grid_n)
    n = xi.size
    theta = np.linspace(-fan_width, fan_width, fan_n)
    dtheta = theta[1] - theta[0]
    envelope = []
    degenerate = 0
    for sign in (1, -1):
        xs = np.concatenate([xi, xi + delta])
        charts, u, v, du, dv = curve.seeds(xs)
        E, F, G = metric_arrays(surface, charts, u, v)
        root = np.sqrt(E * G - F * F)
        e1u, e1v = sign * du, sign * dv
        e2u, e2v = -(F * e1u + G * e1v) / root, (E * e1u + F * e1v) / root
        ct, st = np.cos(theta)[None, :], np.sin(theta)[None, :]
        wu = (ct * e1u[:, None] + st * e2u[:, None]).ravel()
        wv = (ct * e1v[:, None] + st * e2v[:, None]).ravel()
        rep = lambda a: np.repeat(a, fan_n)  # noqa: E731
        slices = chunk_slices(wu.size)
        cu, cuu, cvv = rep(charts), rep(u), rep(v)

        def task(i):
            s = slices[i]
            b = conjugate_batch(surface, cu[s], cuu[s], cvv[s], wu[s], wv[s], p, T_max, tol)
            return b.count >= p, b.charts[:, p - 1], b.states[:, p - 1, 0], b.states[:, p - 1, 1]

        parts = run_chunks(task, len(slices), jobs)
        ok, cc, pu, pv = (np.concatenate([q[k] for q in parts]) for k in range(4))
        ok, cc, pu, pv = (x.reshape(2 * n, fan_n) for x in (ok, cc, pu, pv))
        ec, eu, ev = [], [], []
        for i in range(n):
            if not (ok[i].all() and ok[n + i].all()):
                continue
            ref_c = np.full(fan_n, cc[i, fan_n // 2])
            ref_u = np.full(fan_n, pu[i, fan_n // 2])
            a_u, a_v = relative_coordinates(surface, ref_c, ref_u, cc[i], pu[i], pv[i])
            b_u, b_v = relative_coordinates(surface, ref_c, ref_u, cc[n + i], pu[n + i],
                                            pv[n + i])
            Eh, Fh, Gh = (float(x) for x in surface.charts[int(ref_c[0])].metric(
                a_u[fan_n // 2], a_v[fan_n // 2]))
            tu = np.gradient(a_u, dtheta)
            tv = np.gradient(a_v, dtheta)
            spread = np.sqrt(Eh * tu**2 + 2 * Fh * tu * tv + Gh * tv**2)
            if spread.max() < 1e-6:
                degenerate += 1
                ec.extend(ref_c)
                eu.extend(a_u)
                ev.extend(a_v)
                continue
            D = (b_u - a_u) * tv - (b_v - a_v) * tu
            for j in range(1, fan_n - 2):
                if np.sign(D[j]) != np.sign(D[j + 1]):
                    f = D[j] / (D[j] - D[j + 1])
                    ec.append(int(ref_c[0]))
                    eu.append(a_u[j] + f * (a_u[j + 1] - a_u[j]))
                    ev.append(a_v[j] + f * (a_v[j + 1] - a_v[j]))
        if ec:
            envelope.append(Polyline(np.array(ec), np.array(eu), np.array(ev), False, sign))
    if branches is None:
        branches = trace_all(curve, [p, -p], grid_n, T_max, tol, jobs)
    target = branches[p].polylines() + branches[-p].polylines()
    n_env = sum(len(e) for e in envelope)
    if not envelope and not target:
        h = 0.0
    elif not envelope or not target:
        h = math.inf
    else:
        h = hausdorff_distance(surface, envelope, target)
    return {"p": p, "hausdorff": h, "n_envelope": n_env, "degenerate_fans": degenerate,
            "grid_n": grid_n, "consistent_empty": not envelope and not target}


def inflection_correspondence(curve, branch, tol=1e-2, inflections=None):
    """Match each simple inflection of the curve inside the branch domain with
    a sign change of the branch's geodesic curvature within ``tol / 2``."""
    if inflections is None:
        inflections = find_inflections(curve, max(2048, 4 * branch.grid_n))
    if branch.empty:
        return []
    if not branch.singularities:
        detect_singularities(branch, curve)
    found = [s.params[0] for s in branch.singularities if s.kind == "inflection"]
    per = curve.period
    out = []
    for rec in inflections:
        if rec.kind != "simple":
            continue
        inside = any(lo < rec.xi < hi or (curve.closed and c.closed)
                     for c in branch.components if len(c)
                     for lo, hi in [c.interval()])
        if not inside and curve.closed:
            inside = any(lo < rec.xi + s < hi for c in branch.components if len(c)
                         for lo, hi in [c.interval()] for s in (-per, per))
        if not inside:
            continue
        best, off = None, math.inf
        for x in found:
            d = abs(x - rec.xi)
            if curve.closed:
                d = min(d, per - d)
            if d < off:
                best, off = x, d
        out.append({"xi": rec.xi, "matched": off <= tol / 2, "branch_xi": best,
                    "offset": off if best is not None else None})
    return out
