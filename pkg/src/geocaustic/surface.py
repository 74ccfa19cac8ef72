"""Chart-based Riemannian surfaces.

A :class:`Surface` is a small atlas of :class:`Chart` objects.  Each chart
knows its metric ``(E, F, G) = (g11, g12, g22)`` and, when available, closed
form Christoffel symbols and Gaussian curvature.  Charts built from a plain
numeric metric fall back to central finite differences.

Christoffel symbols are passed around as a 6-tuple in the order

    (G1_11, G1_12, G1_22, G2_11, G2_12, G2_22)

where ``Gk_ij`` is the symbol with upper index ``k``.  All evaluation
functions accept numpy arrays and broadcast.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .expressions import compile_expression, lambdify_tuple

FD_STEP = 1e-5
# second derivatives lose ~eps/h^2 to roundoff, so they use a wider step
FD_STEP2 = 1e-4
SWITCH_LATITUDE = 1.2

_u, _v = sp.symbols("u v", real=True)


class DomainError(ValueError):
    """Point lies outside the chart domain."""


class NoOverlapError(ValueError):
    """No chart of the atlas can represent the requested point."""


@dataclass(frozen=True)
class ChartPoint:
    chart: int
    u: float
    v: float

    @property
    def coords(self):
        return np.array([self.u, self.v])


def christoffel_from_metric(E, F, G, Eu, Ev, Fu, Fv, Gu, Gv):
    """Levi-Civita symbols of a 2D metric from its first derivatives."""
    det = E * G - F * F
    # lowered symbols [ij, l] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    c11_1 = 0.5 * Eu
    c11_2 = Fu - 0.5 * Ev
    c12_1 = 0.5 * Ev
    c12_2 = 0.5 * Gu
    c22_1 = Fv - 0.5 * Gu
    c22_2 = 0.5 * Gv
    G111 = (G * c11_1 - F * c11_2) / det
    G211 = (E * c11_2 - F * c11_1) / det
    G112 = (G * c12_1 - F * c12_2) / det
    G212 = (E * c12_2 - F * c12_1) / det
    G122 = (G * c22_1 - F * c22_2) / det
    G222 = (E * c22_2 - F * c22_1) / det
    return G111, G112, G122, G211, G212, G222


def brioschi(E, F, G, Eu, Ev, Fu, Fv, Gu, Gv, Evv, Fuv, Guu):
    """Gaussian curvature from the metric alone (Brioschi formula)."""
    a = -0.5 * Evv + Fuv - 0.5 * Guu
    det1 = (a * (E * G - F * F)
            - 0.5 * Eu * ((Fv - 0.5 * Gu) * G - F * 0.5 * Gv)
            + (Fu - 0.5 * Ev) * ((Fv - 0.5 * Gu) * F - E * 0.5 * Gv))
    det2 = (-0.5 * Ev * (0.5 * Ev * G - F * 0.5 * Gu)
            + 0.5 * Gu * (0.5 * Ev * F - E * 0.5 * Gu))
    return (det1 - det2) / (E * G - F * F) ** 2


class Chart:
    """One coordinate patch ``(u, v)`` with a metric.

    Parameters
    ----------
    name : str
    domain : ((u0, u1), (v0, v1))
        Open coordinate box; infinite bounds allowed.
    metric : callable
        ``(u, v) -> (E, F, G)``.
    u_period : float, optional
        Period of ``u`` when the chart wraps around (longitude charts).
    """

    analytic = False

    def __init__(self, name, domain, metric, u_period=None):
        self.name = name
        self.domain = tuple(tuple(float(x) for x in d) for d in domain)
        self._metric = metric
        self.u_period = u_period

    def contains(self, u, v):
        (u0, u1), (v0, v1) = self.domain
        u = np.asarray(u)
        v = np.asarray(v)
        return (u > u0) & (u < u1) & (v > v0) & (v < v1)

    def metric(self, u, v):
        E, F, G = self._metric(u, v)
        shape = np.broadcast(u, v).shape
        return tuple(np.broadcast_to(np.asarray(x, float), shape) for x in (E, F, G))

    def metric_derivatives(self, u, v, h=FD_STEP):
        """``(Eu, Ev, Fu, Fv, Gu, Gv)`` by central differences."""
        mu_p = self.metric(u + h, v)
        mu_m = self.metric(u - h, v)
        mv_p = self.metric(u, v + h)
        mv_m = self.metric(u, v - h)
        du = [(a - b) / (2 * h) for a, b in zip(mu_p, mu_m)]
        dv = [(a - b) / (2 * h) for a, b in zip(mv_p, mv_m)]
        return du[0], dv[0], du[1], dv[1], du[2], dv[2]

    def christoffel(self, u, v):
        E, F, G = self.metric(u, v)
        Eu, Ev, Fu, Fv, Gu, Gv = self.metric_derivatives(u, v)
        return christoffel_from_metric(E, F, G, Eu, Ev, Fu, Fv, Gu, Gv)

    def curvature(self, u, v):
        h = FD_STEP2
        E, F, G = self.metric(u, v)
        Eu, Ev, Fu, Fv, Gu, Gv = self.metric_derivatives(u, v, h)
        Evv = (self.metric(u, v + h)[0] - 2 * E + self.metric(u, v - h)[0]) / h**2
        Guu = (self.metric(u + h, v)[2] - 2 * G + self.metric(u - h, v)[2]) / h**2
        Fuv = (self.metric(u + h, v + h)[1] - self.metric(u + h, v - h)[1]
               - self.metric(u - h, v + h)[1] + self.metric(u - h, v - h)[1]) / (4 * h * h)
        return brioschi(E, F, G, Eu, Ev, Fu, Fv, Gu, Gv, Evv, Fuv, Guu)

    def geometry(self, u, v):
        """Christoffel symbols and curvature in one call (integrator hot path)."""
        return self.christoffel(u, v), self.curvature(u, v)


class SymbolicChart(Chart):
    """Chart whose metric is a sympy expression; derivatives are exact."""

    analytic = True

    def __init__(self, name, domain, E, F, G, curvature=None, u_period=None):
        E, F, G = (sp.sympify(x) for x in (E, F, G))
        self.exprs = (E, F, G)
        super().__init__(name, domain, lambdify_tuple([_u, _v], [E, F, G]), u_period)
        derivs = [sp.diff(x, s) for x in (E, F, G) for s in (_u, _v)]
        gam = christoffel_from_metric(E, F, G, *derivs)
        self.christoffel_exprs = gam
        if curvature is None:
            curvature = brioschi(E, F, G, *derivs, sp.diff(E, _v, 2),
                                 sp.diff(F, _u, _v), sp.diff(G, _u, 2))
        self.curvature_expr = sp.sympify(curvature)
        self._jet = sp.lambdify([_u, _v], [*gam, self.curvature_expr],
                                modules="numpy", cse=True)
        self._dmetric = sp.lambdify([_u, _v], derivs, modules="numpy", cse=True)

    def metric(self, u, v):
        return self._metric(u, v)

    def metric_derivatives(self, u, v, h=None):
        shape = np.broadcast(u, v).shape
        return tuple(np.broadcast_to(np.asarray(x, float), shape) for x in self._dmetric(u, v))

    def geometry(self, u, v):
        out = self._jet(u, v)
        return tuple(out[:6]), out[6]

    def christoffel(self, u, v):
        shape = np.broadcast(u, v).shape
        return tuple(np.broadcast_to(np.asarray(x, float), shape)
                     for x in self._jet(u, v)[:6])

    def curvature(self, u, v):
        shape = np.broadcast(u, v).shape
        return np.broadcast_to(np.asarray(self._jet(u, v)[6], float), shape).copy()


class ConformalChart(Chart):
    """Chart of ``exp(2 a f) g_base``; symbols and curvature by the conformal
    change formulas, so ``a = 0`` reproduces the base values exactly."""

    def __init__(self, base, amplitude, bump_jet):
        super().__init__(base.name, base.domain, None, base.u_period)
        self.base = base
        self.amplitude = float(amplitude)
        self.bump_jet = bump_jet
        self.analytic = base.analytic

    def metric(self, u, v):
        f = self.bump_jet(u, v)[0]
        w = np.exp(2 * self.amplitude * f)
        return tuple(w * x for x in self.base.metric(u, v))

    def _geometry(self, u, v):
        a = self.amplitude
        f, fu, fv, fuu, fuv, fvv = self.bump_jet(u, v)
        (G111, G112, G122, G211, G212, G222), K = self.base.geometry(u, v)
        E, F, G = self.base.metric(u, v)
        det = E * G - F * F
        # gradient of f raised with the base metric
        gu = (G * fu - F * fv) / det
        gv = (E * fv - F * fu) / det
        gam = (
            G111 + a * (2 * fu - E * gu),
            G112 + a * (fv - F * gu),
            G122 + a * (-G * gu),
            G211 + a * (-E * gv),
            G212 + a * (fu - F * gv),
            G222 + a * (2 * fv - G * gv),
        )
        lap = (G * (fuu - G111 * fu - G211 * fv)
               - 2 * F * (fuv - G112 * fu - G212 * fv)
               + E * (fvv - G122 * fu - G222 * fv)) / det
        curv = np.exp(-2 * a * f) * (K - a * lap)
        return gam, curv

    def geometry(self, u, v):
        return self._geometry(u, v)

    def christoffel(self, u, v):
        shape = np.broadcast(u, v).shape
        return tuple(np.broadcast_to(np.asarray(x, float), shape)
                     for x in self._geometry(u, v)[0])

    def curvature(self, u, v):
        shape = np.broadcast(u, v).shape
        return np.broadcast_to(np.asarray(self._geometry(u, v)[1], float), shape).copy()


class Surface:
    """A complete Riemannian surface given by an atlas.

    Subclasses override :meth:`preferred_chart` and :meth:`transfer` when
    they carry more than one chart.
    """

    closed = False
    max_step = 1.0

    def __init__(self, charts, descriptor):
        self.charts = list(charts)
        self.descriptor = descriptor

    @property
    def kind(self):
        return self.descriptor["kind"]

    def __repr__(self):
        return f"<Surface {self.descriptor}>"

    # -- atlas handling -----------------------------------------------------
    def preferred_chart(self, chart, u, v):
        """Chart each point should be integrated in (vectorized)."""
        return np.asarray(chart).copy()

    def transfer(self, chart_from, chart_to, u, v, du=None, dv=None):
        """Express points (and tangents) given in ``chart_from`` in ``chart_to``."""
        if np.any(np.asarray(chart_from) != np.asarray(chart_to)):
            raise NoOverlapError("surface has a single chart")
        if du is None:
            return np.array(u, float), np.array(v, float)
        return (np.array(u, float), np.array(v, float),
                np.array(du, float), np.array(dv, float))

    def embed(self, chart, u, v):
        """Proxy coordinates used for spatial indexing of point sets."""
        return np.column_stack([np.atleast_1d(u), np.atleast_1d(v)]).astype(float)

    def sample_points(self, n, rng):
        (u0, u1), (v0, v1) = self.charts[0].domain
        u0, u1 = max(u0, -10.0), min(u1, 10.0)
        v0, v1 = max(v0, -10.0), min(v1, 10.0)
        return (np.zeros(n, int), rng.uniform(u0, u1, n), rng.uniform(v0, v1, n))

    def bump_coordinates(self, chart):
        """Sympy expressions that bump functions are written in."""
        return {"u": _u, "v": _v}

    def coordinate_scale(self, chart, u, v):
        """Length of coordinate displacement per unit of arc length, roughly.

        Used to scale absolute integration tolerances (the half-plane model
        has coordinates that shrink exponentially along geodesics)."""
        out = np.ones(np.shape(u))
        for c in np.unique(chart):
            sel = chart == c
            E, F, G = self.charts[c].metric(u[sel], v[sel])
            tr = E + G
            lam = 0.5 * (tr + np.sqrt((E - G) ** 2 + 4 * F * F))
            out[sel] = 1.0 / np.sqrt(lam)
        return out


class FlatPlane(Surface):
    def __init__(self):
        inf = math.inf
        chart = SymbolicChart("plane", ((-inf, inf), (-inf, inf)), 1, 0, 1, curvature=0)
        super().__init__([chart], {"kind": "euclidean-plane", "params": {}})


class HyperbolicHalfPlane(Surface):
    def __init__(self):
        inf = math.inf
        chart = SymbolicChart("half-plane", ((-inf, inf), (0.0, inf)),
                              _v**-2, 0, _v**-2, curvature=-1)
        super().__init__([chart], {"kind": "hyperbolic-half-plane", "params": {}})

    def sample_points(self, n, rng):
        return (np.zeros(n, int), rng.uniform(-5, 5, n), np.exp(rng.uniform(-3, 3, n)))


# chart B of a spheroid is chart A rotated by the cyclic permutation
# (x, y, z) <- (s2, s3, s1): its poles sit on chart A's equator
_ROTATIONS = (np.eye(3), np.array([[0.0, 1, 0], [0, 0, 1], [1, 0, 0]]))


def _unit_param(u, v):
    return sp.Matrix([sp.cos(v) * sp.cos(u), sp.cos(v) * sp.sin(u), sp.sin(v)])


@functools.lru_cache(maxsize=16)
def _spheroid_charts(c):
    inf = math.inf
    dom = ((-inf, inf), (-math.pi / 2, math.pi / 2))
    charts = []
    for k, rot in enumerate(_ROTATIONS):
        n = sp.Matrix(rot.astype(int).tolist()) * _unit_param(_u, _v)
        P = sp.Matrix([n[0], n[1], c * n[2]])
        Pu, Pv = P.diff(_u), P.diff(_v)
        if k == 0:
            E = sp.cos(_v) ** 2
            F = sp.Integer(0)
            G = sp.sin(_v) ** 2 + c**2 * sp.cos(_v) ** 2
        else:
            E = sp.trigsimp(Pu.dot(Pu))
            F = sp.trigsimp(Pu.dot(Pv))
            G = sp.trigsimp(Pv.dot(Pv))
        if c == 1:
            K = sp.Integer(1)
        else:
            K = 1 / (c**2 * (P[0] ** 2 + P[1] ** 2 + P[2] ** 2 / c**4) ** 2)
        charts.append(SymbolicChart("AB"[k], dom, E, F, G, curvature=K, u_period=2 * math.pi))
    return charts


class Spheroid(Surface):
    """Ellipsoid of revolution ``x^2 + y^2 + z^2/c^2 = 1`` (``c = 1``: unit sphere).

    Two longitude/latitude charts; the second is rotated so that its poles
    lie on the first chart's equator.  Points switch chart when
    ``|latitude| > 1.2``.
    """

    closed = True
    max_step = 0.25

    def __init__(self, c=1.0):
        self.c = float(c)
        if self.c <= 0:
            raise ValueError("ellipsoid axis c must be positive")
        charts = _spheroid_charts(self.c)
        if self.c == 1.0:
            desc = {"kind": "unit-sphere", "params": {}}
        else:
            desc = {"kind": "ellipsoid-of-revolution", "params": {"c": self.c}}
        super().__init__(charts, desc)

    def preferred_chart(self, chart, u, v):
        chart = np.asarray(chart)
        return np.where(np.abs(v) > SWITCH_LATITUDE, 1 - chart, chart)

    @staticmethod
    def _unit(u, v):
        cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
        s = np.stack([cv * cu, cv * su, sv])
        su_ = np.stack([-cv * su, cv * cu, np.zeros_like(u)])
        sv_ = np.stack([-sv * cu, -sv * su, cv])
        return s, su_, sv_

    def transfer(self, chart_from, chart_to, u, v, du=None, dv=None):
        u = np.array(u, float)
        v = np.array(v, float)
        chart_from = np.broadcast_to(np.asarray(chart_from), u.shape)
        chart_to = np.broadcast_to(np.asarray(chart_to), u.shape)
        s, su_, sv_ = self._unit(u, v)
        out_u, out_v = u.copy(), v.copy()
        if du is not None:
            du = np.array(du, float)
            dv = np.array(dv, float)
            out_du, out_dv = du.copy(), dv.copy()
        move = chart_from != chart_to
        if not np.any(move):
            return (out_u, out_v) if du is None else (out_u, out_v, out_du, out_dv)
        for a in (0, 1):
            sel = move & (chart_from == a)
            if not np.any(sel):
                continue
            b = 1 - a
            Rab = _ROTATIONS[b].T @ _ROTATIONS[a]
            n = Rab @ s[:, sel]
            nu = np.arctan2(n[1], n[0])
            nv = np.arcsin(np.clip(n[2], -1.0, 1.0))
            out_u[sel], out_v[sel] = nu, nv
            if du is not None:
                m = Rab @ (su_[:, sel] * du[sel] + sv_[:, sel] * dv[sel])
                _, tu, tv = self._unit(nu, nv)
                out_du[sel] = np.sum(tu * m, axis=0) / np.cos(nv) ** 2
                out_dv[sel] = np.sum(tv * m, axis=0)
        return (out_u, out_v) if du is None else (out_u, out_v, out_du, out_dv)

    def embed(self, chart, u, v):
        chart = np.broadcast_to(np.asarray(chart), np.shape(u))
        s, _, _ = self._unit(np.asarray(u, float), np.asarray(v, float))
        out = np.empty_like(s)
        for k in (0, 1):
            sel = chart == k
            out[:, sel] = _ROTATIONS[k] @ s[:, sel]
        out[2] *= self.c
        return np.atleast_2d(out.T)

    def sample_points(self, n, rng):
        x = rng.normal(size=(3, n))
        x /= np.linalg.norm(x, axis=0)
        chart = (np.abs(x[2]) > math.sin(SWITCH_LATITUDE)).astype(int)
        out_u = np.empty(n)
        out_v = np.empty(n)
        for k in (0, 1):
            sel = chart == k
            m = _ROTATIONS[k].T @ x[:, sel]
            out_u[sel] = np.arctan2(m[1], m[0])
            out_v[sel] = np.arcsin(np.clip(m[2], -1, 1))
        return chart, out_u, out_v

    def bump_coordinates(self, chart):
        n = sp.Matrix(_ROTATIONS[chart].astype(int).tolist()) * _unit_param(_u, _v)
        return {"x": n[0], "y": n[1], "z": n[2]}


def make_bump(surface, bump_desc=None):
    """Per-chart jets ``(f, fu, fv, fuu, fuv, fvv)`` of a smooth bump.

    On spheroids the bump is ``cos(m (u - phase)) cos(v)^m + tilt sin(v)``
    in chart-A longitude/latitude, which is the polynomial
    ``Re((x + i y)^m e^{-i m phase}) + tilt z`` and hence smooth everywhere.
    On single-chart surfaces it is ``cos(ku u + pu) cos(kv v + pv)``.
    """
    bump_desc = dict(bump_desc or {})
    root = surface
    while isinstance(root, ConformalSurface):
        root = root.base
    jets = []
    for k in range(len(surface.charts)):
        coords = root.bump_coordinates(k)
        if isinstance(root, Spheroid):
            m = int(bump_desc.get("m", 2))
            phase = float(bump_desc.get("phase", 0.0))
            tilt = float(bump_desc.get("tilt", 0.0))
            x, y = sp.symbols("x y", real=True)
            poly = sp.expand((x + sp.I * y) ** m)
            f = (sp.re(poly) * math.cos(m * phase) + sp.im(poly) * math.sin(m * phase))
            f = f.subs({x: coords["x"], y: coords["y"]}) + tilt * coords["z"]
        else:
            f = (sp.cos(float(bump_desc.get("ku", 1.0)) * _u + float(bump_desc.get("pu", 0.0)))
                 * sp.cos(float(bump_desc.get("kv", 1.0)) * _v + float(bump_desc.get("pv", 0.0))))
        parts = [f, sp.diff(f, _u), sp.diff(f, _v), sp.diff(f, _u, 2),
                 sp.diff(f, _u, _v), sp.diff(f, _v, 2)]
        jets.append(lambdify_tuple([_u, _v], parts))
    return jets, bump_desc


class ConformalSurface(Surface):
    """``g = exp(2 a f) g_base`` for a fixed smooth bump ``f``."""

    def __init__(self, base, amplitude, bump=None):
        self.base = base
        self.amplitude = float(amplitude)
        jets, bump_desc = make_bump(base, bump)
        self.bump_jets = jets
        charts = [ConformalChart(ch, amplitude, jet) for ch, jet in zip(base.charts, jets)]
        desc = {"kind": "conformal-perturbation",
                "params": {"base": base.descriptor, "amplitude": self.amplitude, "bump": bump_desc}}
        super().__init__(charts, desc)
        self.closed = base.closed
        self.max_step = base.max_step

    def preferred_chart(self, chart, u, v):
        return self.base.preferred_chart(chart, u, v)

    def transfer(self, *args, **kwargs):
        return self.base.transfer(*args, **kwargs)

    def embed(self, chart, u, v):
        return self.base.embed(chart, u, v)

    def sample_points(self, n, rng):
        return self.base.sample_points(n, rng)

    def bump_coordinates(self, chart):
        return self.base.bump_coordinates(chart)


def conformal_perturbation(base, amplitude, bump=None):
    """Perturbed surface; ``amplitude == 0`` returns ``base`` itself."""
    if amplitude == 0:
        return base
    return ConformalSurface(base, amplitude, bump)


class CustomSurface(Surface):
    """User metric given as expression strings on a coordinate box."""

    def __init__(self, metric, domain):
        fns = [compile_expression(expr, ("u", "v")) for expr in metric]

        def evaluate(u, v):
            return tuple(fn(u, v) for fn in fns)

        chart = Chart("custom", domain, evaluate)
        super().__init__([chart], {"kind": "custom", "metric": list(metric),
                                   "domain": [list(d) for d in domain]})


BUILTINS = {
    "euclidean-plane": "flat plane, identity metric in (u, v)",
    "unit-sphere": "round sphere, two rotated longitude/latitude charts",
    "hyperbolic-half-plane": "upper half-plane, g = v^-2 I",
    "ellipsoid-of-revolution": "x^2 + y^2 + z^2/c^2 = 1 (param c)",
    "conformal-perturbation": "exp(2 a f) g_base (params base, amplitude, bump)",
    "custom": "user metric expressions g11, g12, g22 on a box domain",
}


def surface_from_dict(desc):
    """Build a surface from its JSON description."""
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ValueError("surface description needs a 'kind'")
    kind = desc["kind"]
    params = desc.get("params", {}) or {}
    if kind == "euclidean-plane":
        return FlatPlane()
    if kind == "unit-sphere":
        return Spheroid(1.0)
    if kind == "hyperbolic-half-plane":
        return HyperbolicHalfPlane()
    if kind == "ellipsoid-of-revolution":
        return Spheroid(float(params.get("c", 1.0)))
    if kind == "conformal-perturbation":
        base = surface_from_dict(params.get("base", {"kind": "unit-sphere"}))
        return conformal_perturbation(base, float(params.get("amplitude", 0.0)),
                                      params.get("bump"))
    if kind == "custom":
        metric = desc.get("metric")
        domain = desc.get("domain")
        if metric is None or domain is None or len(metric) != 3:
            raise ValueError("custom surface needs 'metric' [g11, g12, g22] and 'domain'")
        return CustomSurface(metric, domain)
    raise ValueError(f"unknown surface kind {kind!r}")


# -- point-level operations ---------------------------------------------------

def _check(surface, p):
    chart = surface.charts[p.chart]
    if not chart.contains(p.u, p.v):
        raise DomainError(f"point ({p.u}, {p.v}) outside domain of chart {chart.name}")
    return chart


def metric_at(surface, p: ChartPoint) -> np.ndarray:
    """Metric matrix ``[[g11, g12], [g12, g22]]`` at ``p``."""
    E, F, G = _check(surface, p).metric(p.u, p.v)
    return np.array([[float(E), float(F)], [float(F), float(G)]])


def christoffel_at(surface, p: ChartPoint) -> np.ndarray:
    """Christoffel symbols as an array ``gamma[k, i, j]``."""
    g = [float(x) for x in _check(surface, p).christoffel(p.u, p.v)]
    out = np.empty((2, 2, 2))
    for k in range(2):
        a, b, c = g[3 * k: 3 * k + 3]
        out[k] = [[a, b], [b, c]]
    return out


def gauss_curvature_at(surface, p: ChartPoint) -> float:
    return float(_check(surface, p).curvature(p.u, p.v))


def switch_chart(surface, p: ChartPoint, tangent, target=None):
    """Move ``p`` and a tangent vector to another chart.

    ``target`` defaults to the other chart of a two-chart atlas; on a single
    chart atlas the point is returned unchanged.
    """
    _check(surface, p)
    if len(surface.charts) == 1:
        if target not in (None, p.chart):
            raise NoOverlapError("surface has a single chart")
        return p, np.array(tangent, float)
    if target is None:
        target = 1 - p.chart
    u, v, du, dv = surface.transfer(p.chart, target, p.u, p.v, tangent[0], tangent[1])
    q = ChartPoint(int(target), float(u), float(v))
    if not surface.charts[target].contains(q.u, q.v):
        raise NoOverlapError("point not representable in target chart")
    return q, np.array([float(du), float(dv)])


def g_norm(surface, p: ChartPoint, w) -> float:
    g = metric_at(surface, p)
    w = np.asarray(w, float)
    return float(math.sqrt(w @ g @ w))
