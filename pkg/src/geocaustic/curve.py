"""Regular curves on a surface.

A :class:`RegularCurve` lives in one chart of its surface and is described
by a *raw* jet ``t -> (u, v, u', v', u'', v'')``: exact sympy derivatives for
expression curves, cubic-spline derivatives for sampled ones.  Its
arc-length reparameterization keeps the raw jet and inverts the arc-length
integral numerically, so unit speed holds to rounding error.

Sign convention: ``k_g`` is positive when the curve turns towards its left
normal, the tangent rotated by +90 degrees in the chart orientation.  A
counterclockwise plane circle has ``k_g = 1/r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

import sympy as sp

from .expressions import lambdify_tuple, parse_expression
from .flow import UnitTangent, initial_state
from .integrator import OK, march
from .surface import ChartPoint

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(10)
ARC_PANELS = 4096
MIN_SPEED = 1e-10
# speed minima below this fraction of the median speed count as singular
MIN_SPEED_RATIO = 1e-8
MAX_MINIMA = 64
INFLECTION_KG_TOL = 1e-7
PLATEAU_LENGTH = 1e-3


class RegularityError(ValueError):
    """The curve has (numerically) vanishing speed, near ``xi`` when known."""

    def __init__(self, message, xi=None):
        super().__init__(message)
        self.xi = xi


@dataclass(frozen=True)
class InflectionRecord:
    xi: float
    kind: str  # "simple" | "degenerate"
    slope: float = float("nan")


class RegularCurve:
    """Curve ``xi -> (u, v)`` in chart ``chart`` of ``surface``.

    Parameters
    ----------
    raw_jet : callable
        ``t -> (u, v, u', v', u'', v'')`` on arrays.
    t_range : (a, b)
        Raw parameter interval; for closed curves one period.
    closed : bool
    """

    def __init__(self, surface, raw_jet, t_range, closed=False, chart=0, source=None):
        self.surface = surface
        self.chart = int(chart)
        self._raw = raw_jet
        self.t_range = (float(t_range[0]), float(t_range[1]))
        if not self.t_range[1] > self.t_range[0]:
            raise ValueError("curve parameter range must be increasing")
        self.closed = bool(closed)
        self.source = source
        self.arc_length = False
        self._arc = None
        self._metric = surface.charts[self.chart].metric

    # -- parameterization --------------------------------------------------
    @property
    def xi_range(self):
        if self.arc_length:
            return (self.t_range[0], self.t_range[0] + self.length)
        return self.t_range

    @property
    def period(self):
        a, b = self.xi_range
        return b - a

    @property
    def length(self):
        return self._arc_table().length

    def _arc_table(self):
        if self._arc is None:
            self._arc = _ArcLength(self._raw_speed, *self.t_range)
        return self._arc

    def _raw_speed(self, t):
        u, v, du, dv, _, _ = self._raw(t)
        E, F, G = self._metric(u, v)
        return np.sqrt(E * du * du + 2 * F * du * dv + G * dv * dv)

    def _raw_param(self, xi):
        """Raw parameter for ``xi`` (wrapping closed curves to one period)."""
        xi = np.asarray(xi, float)
        a, b = self.xi_range
        if self.closed:
            xi = a + np.mod(xi - a, b - a)
        if not self.arc_length:
            return xi
        return self._arc_table().t_of_s(xi - a)

    def jet(self, xi):
        """``(u, v, u_xi, v_xi, u_xixi, v_xixi)`` at ``xi``."""
        t = self._raw_param(xi)
        u, v, du, dv, ddu, ddv = self._raw(t)
        if not self.arc_length:
            return u, v, du, dv, ddu, ddv
        E, F, G = self._metric(u, v)
        sig = np.sqrt(E * du * du + 2 * F * du * dv + G * dv * dv)
        Au, Av = _covariant_acc(self, u, v, du, dv, ddu, ddv)
        dsig = (E * du * Au + F * (du * Av + dv * Au) + G * dv * Av) / sig
        s2 = sig * sig
        return (u, v, du / sig, dv / sig,
                (ddu - du * dsig / sig) / s2, (ddv - dv * dsig / sig) / s2)

    def position(self, xi):
        u, v, *_ = self._raw(self._raw_param(xi))
        return u, v

    def point(self, xi) -> ChartPoint:
        u, v = self.position(float(xi))
        return ChartPoint(self.chart, float(u), float(v))

    def speed(self, xi):
        u, v, du, dv, _, _ = self.jet(xi)
        E, F, G = self._metric(u, v)
        return np.sqrt(E * du * du + 2 * F * du * dv + G * dv * dv)

    def grid(self, n):
        """``n`` parameter values; closed curves omit the repeated endpoint."""
        a, b = self.xi_range
        return np.linspace(a, b, n, endpoint=not self.closed)

    def seeds(self, xi):
        """Batch seeds ``(charts, u, v, du, dv)`` of the tangent geodesics."""
        if not self.arc_length:
            raise ValueError("tangent seeds need an arc-length parameterized curve")
        u, v, du, dv, _, _ = self.jet(np.atleast_1d(np.asarray(xi, float)))
        return np.full(u.shape, self.chart), u, v, du, dv

    def reversed(self):
        """The same curve traversed backwards, ``t -> a + b - t``."""
        a, b = self.t_range
        raw = self._raw

        def jet(t):
            u, v, du, dv, ddu, ddv = raw(a + b - np.asarray(t, float))
            return u, v, -du, -dv, ddu, ddv

        out = RegularCurve(self.surface, jet, self.t_range, self.closed, self.chart,
                           {"reversed": self.source})
        return arc_length_reparameterize(out) if self.arc_length else out

    def on_surface(self, surface):
        """The same coordinate curve measured with another metric on the same atlas."""
        if surface is self.surface:
            return self
        out = RegularCurve(surface, self._raw, self.t_range, self.closed, self.chart,
                           self.source)
        return arc_length_reparameterize(out) if self.arc_length else out

    def __repr__(self):
        return (f"<RegularCurve chart={self.chart} closed={self.closed} "
                f"xi_range={self.xi_range} arc_length={self.arc_length}>")


def _covariant_acc(curve, u, v, du, dv, ddu, ddv):
    g = curve.surface.charts[curve.chart].christoffel(u, v)
    G111, G112, G122, G211, G212, G222 = g
    Au = ddu + G111 * du * du + 2 * G112 * du * dv + G122 * dv * dv
    Av = ddv + G211 * du * du + 2 * G212 * du * dv + G222 * dv * dv
    return Au, Av


class _ArcLength:
    """Arc-length table by composite Gauss-Legendre with Newton inversion."""

    def __init__(self, speed, a, b, panels=ARC_PANELS):
        self.speed = speed
        self.a = a
        self.b = b
        self.edges = np.linspace(a, b, panels + 1)
        self.width = (b - a) / panels
        lo = self.edges[:-1]
        nodes = lo[:, None] + 0.5 * self.width * (GL_NODES[None, :] + 1)
        sp_ = speed(nodes)
        if not np.all(np.isfinite(sp_)) or sp_.min() < MIN_SPEED:
            bad = nodes.ravel()[np.argmin(np.where(np.isfinite(sp_), sp_, -1).ravel())]
            raise RegularityError(f"curve speed vanishes near parameter {bad:.6g}", float(bad))
        self._check_minima(nodes.ravel(), sp_.ravel())
        panel_len = 0.5 * self.width * (sp_ @ GL_WEIGHTS)
        self.cum = np.concatenate([[0.0], np.cumsum(panel_len)])
        self.length = float(self.cum[-1])

    def _check_minima(self, x, s):
        # a zero of the speed between quadrature nodes is found by refining
        # each sampled local minimum
        floor = MIN_SPEED_RATIO * float(np.median(s))
        k = np.flatnonzero((s[1:-1] <= s[:-2]) & (s[1:-1] <= s[2:])) + 1
        for i in k[np.argsort(s[k])][:MAX_MINIMA]:
            res = minimize_scalar(lambda t: float(self.speed(np.array([t]))[0]),
                                  bounds=(x[i - 1], x[i + 1]), method="bounded",
                                  options={"xatol": 1e-14 * max(1.0, abs(x[i]))})
            if res.fun < floor:
                raise RegularityError(f"curve speed vanishes near parameter {res.x:.6g}",
                                      float(res.x))

    def s_of_t(self, t):
        t = np.asarray(t, float)
        i = np.clip(np.floor((t - self.a) / self.width).astype(int), 0, len(self.edges) - 2)
        lo = self.edges[i]
        half = 0.5 * (t - lo)
        nodes = lo[..., None] + half[..., None] * (GL_NODES + 1)
        return self.cum[i] + half * (self.speed(nodes) @ GL_WEIGHTS)

    def t_of_s(self, s):
        s = np.asarray(s, float)
        t = np.interp(s, self.cum, self.edges)
        for _ in range(8):
            err = self.s_of_t(t) - s
            t = t - err / self.speed(t)
            if np.all(np.abs(err) < 1e-15 * max(1.0, self.length)):
                break
        return t


def arc_length_reparameterize(curve: RegularCurve, tol=1e-8) -> RegularCurve:
    """Same image and orientation, unit speed, ``xi`` starting at ``t_range[0]``."""
    out = RegularCurve(curve.surface, curve._raw, curve.t_range, curve.closed, curve.chart,
                       curve.source)
    out.arc_length = True
    out._arc = curve._arc_table()
    probe = out.speed(out.grid(256))
    if np.max(np.abs(probe - 1.0)) > tol:
        raise RegularityError("arc-length reparameterization failed to reach unit speed")
    return out


def geodesic_curvature(curve: RegularCurve, xi):
    """Signed geodesic curvature (positive when turning left)."""
    t = curve._raw_param(xi)
    u, v, du, dv, ddu, ddv = curve._raw(t)
    E, F, G = curve._metric(u, v)
    sig = np.sqrt(E * du * du + 2 * F * du * dv + G * dv * dv)
    Au, Av = _covariant_acc(curve, u, v, du, dv, ddu, ddv)
    return np.sqrt(E * G - F * F) * (du * Av - dv * Au) / sig**3


def _kg_slope(curve, xi, h=1e-5):
    return (geodesic_curvature(curve, xi + h) - geodesic_curvature(curve, xi - h)) / (2 * h)


def find_inflections(curve: RegularCurve, grid_n=2048, tol=1e-6):
    """Zeros of ``k_g``, classified as simple (``|dk_g/dxi| > tol``) or degenerate."""
    if grid_n < 16:
        raise ValueError("grid_n must be at least 16")
    a, b = curve.xi_range
    xs = np.linspace(a, b, grid_n + 1)
    if not curve.closed:
        step = xs[1] - xs[0]
        xs = xs[(xs >= a + 2 * step) & (xs <= b - 2 * step)]
    k = geodesic_curvature(curve, xs)
    records = []
    small = np.abs(k) < INFLECTION_KG_TOL
    # plateaus of (numerically) vanishing curvature
    in_plateau = np.zeros(xs.size, bool)
    i = 0
    while i < xs.size:
        if small[i]:
            j = i
            while j + 1 < xs.size and small[j + 1]:
                j += 1
            if xs[j] - xs[i] > PLATEAU_LENGTH:
                records.append(InflectionRecord(float(0.5 * (xs[i] + xs[j])), "degenerate", 0.0))
                in_plateau[i:j + 1] = True
            i = j + 1
        else:
            i += 1
    sgn = np.sign(k)
    for i in range(xs.size - 1):
        if in_plateau[i] or in_plateau[i + 1]:
            continue
        if sgn[i] == 0:
            root = xs[i]
        elif sgn[i] * sgn[i + 1] < 0:
            root = brentq(lambda x: float(geodesic_curvature(curve, x)), xs[i], xs[i + 1],
                          xtol=1e-12, rtol=4 * np.finfo(float).eps)
        else:
            continue
        if curve.closed and root >= b:
            root -= b - a
        slope = float(_kg_slope(curve, root))
        kind = "simple" if abs(slope) > tol else "degenerate"
        records.append(InflectionRecord(float(root), kind, slope))
    records.sort(key=lambda r: r.xi)
    return records


def tangent_geodesic_seed(curve: RegularCurve, xi) -> UnitTangent:
    if not curve.arc_length:
        raise ValueError("tangent seeds need an arc-length parameterized curve")
    u, v, du, dv, _, _ = curve.jet(float(xi))
    return UnitTangent(ChartPoint(curve.chart, float(u), float(v)), float(du), float(dv))


def left_normal(curve, xi):
    """Unit left normal ``(n_u, n_v)`` of an arc-length curve."""
    u, v, du, dv, _, _ = curve.jet(xi)
    E, F, G = curve._metric(u, v)
    root = np.sqrt(E * G - F * F)
    # J t = g^{-1} (rotation of the lowered tangent) -- unit and g-orthogonal to t
    nu = -(F * du + G * dv) / root
    nv = (E * du + F * dv) / root
    return nu, nv


def bump_values(curve, xi, bump_desc=None):
    """Smooth bump ``b(xi) = offset + amplitude cos(2 pi mode (xi - a) / L + phase)``."""
    bump_desc = dict(bump_desc or {})
    a, b = curve.xi_range
    mode = float(bump_desc.get("mode", 3))
    return (float(bump_desc.get("offset", 0.0)) + float(bump_desc.get("amplitude", 1.0))
            * np.cos(2 * math.pi * mode * (np.asarray(xi) - a) / (b - a)
                     + float(bump_desc.get("phase", 0.0))))


def perturb_curve(curve: RegularCurve, lam, bump=None, samples=4096, tol=1e-12):
    """Displace the curve by ``lam * b(xi)`` along its right normal.

    Each point moves along the geodesic leaving it in the normal direction,
    so the offset is an exact geodesic distance.  ``lam == 0`` returns the
    curve unchanged.  The displaced samples are splined and re-parameterized
    by arc length.
    """
    if lam == 0:
        return curve
    if not curve.arc_length:
        curve = arc_length_reparameterize(curve)
    xi = curve.grid(samples)
    u, v, _, _, _, _ = curve.jet(xi)
    nu, nv = left_normal(curve, xi)
    amp = -lam * bump_values(curve, xi, bump)
    y0 = initial_state(u, v, amp * nu, amp * nv)
    res = march(curve.surface, y0, np.full(xi.size, curve.chart), 1.0, tol)
    if np.any(res["status"] != OK):
        raise RegularityError("normal displacement left the atlas")
    charts = res["charts"]
    pu, pv = res["y"][0], res["y"][1]
    back = charts != curve.chart
    if np.any(back):
        pu[back], pv[back] = curve.surface.transfer(charts[back], curve.chart,
                                                    pu[back], pv[back])
    period = curve.surface.charts[curve.chart].u_period
    if period:
        pu = u + np.mod(pu - u + period / 2, period) - period / 2
    a, b = curve.xi_range
    out = sampled_curve(curve.surface, pu, pv, (a, b), curve.closed, curve.chart,
                        source={"perturbed": curve.source, "lambda": lam, "bump": bump})
    return arc_length_reparameterize(out)


# -- constructors ---------------------------------------------------------------

def expression_curve(surface, u_expr, v_expr, xi_range, closed=False, chart=0):
    """Curve from expression strings in the parameter ``xi`` (alias ``t``)."""
    xi = sp.Symbol("xi", real=True)
    names = {"xi": xi, "t": xi}
    exprs = [parse_expression(u_expr, names), parse_expression(v_expr, names)]
    parts = exprs + [sp.diff(e, xi) for e in exprs] + [sp.diff(e, xi, 2) for e in exprs]
    fn = lambdify_tuple([xi], parts)

    def jet(t):
        u, v, du, dv, ddu, ddv = fn(np.asarray(t, float))
        return u, v, du, dv, ddu, ddv

    return RegularCurve(surface, jet, xi_range, closed, chart,
                        {"kind": "expression", "u": str(u_expr), "v": str(v_expr)})


def sampled_curve(surface, u, v, xi_range, closed=False, chart=0, source=None):
    """Curve through samples at equally spaced parameters.

    Closed curves omit the repeated endpoint; a winding of ``u`` in a
    periodic chart is handled by splining ``u`` minus its linear drift.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if u.shape != v.shape or u.ndim != 1 or u.size < 4:
        raise ValueError("curve samples must be two equal-length lists of at least 4 values")
    a, b = float(xi_range[0]), float(xi_range[1])
    period = surface.charts[chart].u_period
    if closed:
        t = np.linspace(a, b, u.size + 1)
        drift = 0.0
        if period:
            # number of turns u makes before closing up
            drift = round((u[-1] - u[0]) / period) * period
        uu = np.append(u, u[0] + drift)
        vv = np.append(v, v[0])
        lin = drift * (t - a) / (b - a)
        su = CubicSpline(t, uu - lin, bc_type="periodic")
        sv = CubicSpline(t, vv, bc_type="periodic")
        rate = drift / (b - a)
    else:
        t = np.linspace(a, b, u.size)
        su = CubicSpline(t, u)
        sv = CubicSpline(t, v)
        rate = 0.0
    dsu, dsv = su.derivative(), sv.derivative()
    ddsu, ddsv = su.derivative(2), sv.derivative(2)

    def jet(x):
        x = np.asarray(x, float)
        return (su(x) + rate * (x - a), sv(x), dsu(x) + rate, dsv(x), ddsu(x), ddsv(x))

    src = source if source is not None else {"kind": "samples", "n": int(u.size)}
    return RegularCurve(surface, jet, (a, b), closed, chart, src)


def _constant(x):
    """A number, or a constant expression string such as ``"2*pi"``."""
    if isinstance(x, str):
        return float(parse_expression(x, {}).evalf())
    return float(x)


def curve_from_dict(desc, surface):
    """Build an arc-length parameterized curve from its JSON description."""
    if not isinstance(desc, dict):
        raise ValueError("curve description must be a JSON object")
    kind = desc.get("kind", "expression")
    closed = bool(desc.get("closed", False))
    chart = int(desc.get("chart", 0))
    if "xi_range" not in desc:
        raise ValueError("curve description needs 'xi_range'")
    xi_range = [_constant(x) for x in desc["xi_range"]]
    if kind == "expression":
        curve = expression_curve(surface, desc["u"], desc["v"], xi_range, closed, chart)
    elif kind == "samples":
        curve = sampled_curve(surface, desc["u"], desc["v"], xi_range, closed, chart)
    else:
        raise ValueError(f"unknown curve kind {kind!r}")
    return arc_length_reparameterize(curve)
