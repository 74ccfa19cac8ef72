"""Geodesics, Jacobi fields along them, and conjugate points.

Every geodesic is integrated together with the scalar Jacobi equation
``J'' + K J = 0`` with ``J(0) = 0``, ``J'(0) = 1``; zeros of ``J`` at
positive arc length are the conjugate points of the starting point along
the geodesic.  Batch functions take arrays of seeds and integrate them in a
single vectorized march.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .integrator import (LEFT_ATLAS, OK, TOLERANCE, IntegrationError, Step,
                         bracketed_root, march)
from .surface import ChartPoint, DomainError, g_norm

DEFAULT_TOL = 1e-10
ROOT_TOL = 1e-12
DEGENERATE_SLOPE = 1e-8
STATUS_NAMES = {OK: "ok", LEFT_ATLAS: "left-atlas", TOLERANCE: "tolerance-failure"}


@dataclass(frozen=True)
class UnitTangent:
    """A point and a unit tangent vector ``(du, dv)`` in the point's chart."""

    point: ChartPoint
    du: float
    dv: float

    @property
    def vector(self):
        return np.array([self.du, self.dv])

    @classmethod
    def from_direction(cls, surface, point, direction):
        """Normalize ``direction`` to unit length in the metric at ``point``."""
        w = np.asarray(direction, float)
        n = g_norm(surface, point, w)
        if not n > 0:
            raise ValueError("direction must be nonzero")
        return cls(point, float(w[0] / n), float(w[1] / n))

    def check(self, surface, tol=1e-8):
        if not surface.charts[self.point.chart].contains(self.point.u, self.point.v):
            raise DomainError("seed point outside its chart")
        n = g_norm(surface, self.point, self.vector)
        if abs(n - 1.0) > tol:
            raise ValueError(f"seed tangent is not unit length (|v| = {n!r})")

    def reversed(self):
        return UnitTangent(self.point, -self.du, -self.dv)


def initial_state(u, v, du, dv):
    """Batch state with the Jacobi data ``J = 0``, ``J' = 1``."""
    u = np.atleast_1d(np.asarray(u, float))
    out = np.zeros((6, u.size))
    out[0], out[1], out[2], out[3] = u, v, du, dv
    out[5] = 1.0
    return out


class GeodesicPath:
    """Dense representation of one geodesic on ``[t_min, t_max]``.

    Query with :meth:`state`, :meth:`point`, :meth:`velocity` and
    :meth:`jacobi`.  Points are reported in whichever chart the integrator
    was using at that arc length.
    """

    def __init__(self, surface, seed, forward, backward):
        self.surface = surface
        self.seed = seed
        # each piece: list of (t0, t1, Step with one column)
        self._pieces = []
        for steps in (backward[::-1], forward):
            for s in steps:
                lo, hi = sorted((s.t0, s.t1))
                self._pieces.append((lo, hi, s))
        self._lows = [p[0] for p in self._pieces]
        self.t_min = min([p[0] for p in self._pieces], default=0.0)
        self.t_max = max([p[1] for p in self._pieces], default=0.0)

    def _find(self, t):
        if not (self.t_min - 1e-12 <= t <= self.t_max + 1e-12):
            raise ValueError(f"t={t} outside integrated span [{self.t_min}, {self.t_max}]")
        if not self._pieces:
            return None
        if t >= 0:
            i = bisect.bisect_right(self._lows, t) - 1
        else:
            i = bisect.bisect_left(self._lows, t)
            i = min(max(i, 0), len(self._pieces) - 1)
            while i > 0 and self._pieces[i][0] > t:
                i -= 1
        return self._pieces[max(i, 0)]

    def state(self, t):
        """``(chart, y)`` with ``y = (u, v, u', v', J, J')`` at arc length ``t``."""
        t = float(t)
        piece = self._find(t)
        if piece is None:
            y = initial_state(self.seed.point.u, self.seed.point.v, self.seed.du, self.seed.dv)
            return self.seed.point.chart, y[:, 0]
        _, _, step = piece
        theta = (t - step.t0) / step.h
        return int(step.charts[0]), step.dense(min(max(theta, 0.0), 1.0))[:, 0]

    def point(self, t):
        c, y = self.state(t)
        return ChartPoint(c, float(y[0]), float(y[1]))

    def velocity(self, t):
        c, y = self.state(t)
        return ChartPoint(c, float(y[0]), float(y[1])), np.array([y[2], y[3]])

    def jacobi(self, t):
        """Normal Jacobi field ``(J, J')`` at arc length ``t``."""
        _, y = self.state(t)
        return float(y[4]), float(y[5])

    def sample(self, ts):
        return [self.state(t) for t in ts]


def _record_steps(store):
    def on_step(step):
        store.append(step.take(slice(None)))
        return None

    return on_step


def shoot(surface, seed: UnitTangent, t_span=(0.0, 1.0), tol=DEFAULT_TOL):
    """Integrate the geodesic through ``seed`` over ``t_span``.

    ``t_span`` must contain 0.  Raises :class:`IntegrationError` with kind
    ``left-atlas`` or ``tolerance-failure`` when the geodesic cannot be
    continued over the whole span.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 > 0 or t1 < 0:
        raise ValueError("t_span must contain 0")
    seed.check(surface)
    y0 = initial_state(seed.point.u, seed.point.v, seed.du, seed.dv)
    charts = np.array([seed.point.chart])
    pieces = []
    for end in (t1, t0):
        steps = []
        if end != 0:
            res = march(surface, y0, charts, end, tol, on_step=_record_steps(steps))
            if res["status"][0] != OK:
                raise IntegrationError("geodesic could not be continued", float(res["t"][0]),
                                       STATUS_NAMES[int(res["status"][0])])
        pieces.append(steps)
    return GeodesicPath(surface, seed, pieces[0], pieces[1])


def jacobi_scalar(surface, path_or_seed, t_span=None, tol=DEFAULT_TOL):
    """Normal Jacobi field with ``J(0) = 0``, ``J'(0) = 1`` along a geodesic.

    Returns a callable ``t -> (J(t), J'(t))``.  A :class:`GeodesicPath`
    already carries ``J`` and is reused when it covers ``t_span``.
    """
    path = path_or_seed
    if not isinstance(path, GeodesicPath):
        path = shoot(surface, path_or_seed, t_span or (0.0, 1.0), tol)
    elif t_span is not None and (t_span[0] < path.t_min - 1e-12 or t_span[1] > path.t_max + 1e-12):
        path = shoot(surface, path.seed, t_span, tol)
    return path.jacobi


@dataclass(frozen=True)
class ConjugateRecord:
    """The ``order``-th zero of ``J`` along a geodesic."""

    order: int
    tau: float
    point: ChartPoint
    velocity: tuple
    dJ: float
    degenerate: bool


class ConjugateBatch:
    """Result of :func:`conjugate_batch`; arrays indexed by seed then order.

    ``tau[i, k]`` is the (k+1)-th conjugate distance of seed ``i`` (NaN when
    not reached).  ``states[i, k]`` is ``(u, v, u', v', J, J')`` there and
    ``charts[i, k]`` its chart.  ``status[i]`` is OK, LEFT_ATLAS or
    TOLERANCE and ``t_reached[i]`` the arc length the integration got to.
    """

    def __init__(self, m, p_max):
        self.tau = np.full((m, p_max), np.nan)
        self.states = np.full((m, p_max, 6), np.nan)
        self.charts = np.zeros((m, p_max), int)
        self.degenerate = np.zeros((m, p_max), bool)
        self.count = np.zeros(m, int)
        self.status = np.zeros(m, int)
        self.t_reached = np.zeros(m)

    def record(self, i, k):
        st = self.states[i, k]
        return ConjugateRecord(k + 1, float(self.tau[i, k]),
                               ChartPoint(int(self.charts[i, k]), float(st[0]), float(st[1])),
                               (float(st[2]), float(st[3])), float(st[5]),
                               bool(self.degenerate[i, k]))


class _ZeroTracker:
    """Step callback that locates sign changes of ``J`` for every member."""

    def __init__(self, batch, p_max, root_tol):
        self.batch = batch
        self.p_max = p_max
        self.root_tol = root_tol
        m = batch.tau.shape[0]
        self.sign = np.ones(m)
        self.slope_scale = np.ones(m)

    def __call__(self, step: Step):
        mem = step.members
        J0 = step.y0[4]
        J1 = step.y1[4]
        s_prev = self.sign[mem]
        cross = (np.sign(J1) != s_prev) & np.isfinite(J1)
        retire = np.zeros(mem.size, bool)
        cols = np.flatnonzero(cross)
        if cols.size:
            h = step.h

            def fun(theta, active):
                c = cols[active]
                return step.dense(theta, c)[4]

            f0 = J0[cols]
            f1 = J1[cols]
            exact = f1 == 0
            theta = np.ones(cols.size)
            need = ~exact & (f0 != 0)
            if np.any(need):
                sub = np.flatnonzero(need)
                theta_sub = bracketed_root(lambda x, a: fun(x, sub[a]), np.zeros(sub.size),
                                           np.ones(sub.size), f0[sub], f1[sub],
                                           self.root_tol / abs(h))
                theta[sub] = theta_sub
            theta[(f0 == 0) & ~exact] = 0.0
            states = step.dense(theta, cols)
            for j, col in enumerate(cols):
                i = mem[col]
                k = self.batch.count[i]
                if k >= self.p_max:
                    continue
                self.batch.tau[i, k] = step.t0 + theta[j] * h
                self.batch.states[i, k] = states[:, j]
                self.batch.charts[i, k] = step.charts[col]
                self.batch.degenerate[i, k] = (abs(states[5, j])
                                               < DEGENERATE_SLOPE * self.slope_scale[i])
                self.batch.count[i] = k + 1
                if k + 1 >= self.p_max:
                    retire[col] = True
            # after an exact zero at the end point the sign flips as well
            self.sign[mem[cols]] = np.where(J1[cols] == 0, -s_prev[cols], np.sign(J1[cols]))
        self.slope_scale[mem] = np.maximum(self.slope_scale[mem], np.abs(step.y1[5]))
        return retire


def conjugate_batch(surface, charts, u, v, du, dv, p_max, t_max, tol=DEFAULT_TOL,
                    root_tol=ROOT_TOL, leaders=None, on_step=None):
    """First ``p_max`` conjugate distances for a batch of unit-speed seeds.

    Seeds are integrated forward up to arc length ``t_max``; each member is
    retired as soon as its ``p_max``-th zero is found.
    """
    y0 = initial_state(u, v, du, dv)
    m = y0.shape[1]
    batch = ConjugateBatch(m, p_max)
    if m == 0:
        return batch
    tracker = _ZeroTracker(batch, p_max, root_tol)

    def callback(step):
        retire = tracker(step)
        if on_step is not None:
            extra = on_step(step)
            if extra is not None:
                retire = retire | np.asarray(extra, bool)
        return retire

    res = march(surface, y0, np.broadcast_to(np.asarray(charts, int), (m,)), t_max, tol,
                on_step=callback, leaders=leaders)
    batch.status = res["status"]
    batch.t_reached = res["t"]
    return batch


def conjugate_distances(surface, seed: UnitTangent, T_max=50.0, p_max=None, tol=DEFAULT_TOL):
    """All conjugate points along the geodesic of ``seed`` with ``tau <= T_max``.

    Returns a list of :class:`ConjugateRecord` ordered by ``tau``.  The
    search stops after ``p_max`` zeros when given.
    """
    seed.check(surface)
    cap = p_max if p_max is not None else max(8, int(math.ceil(T_max)) * 4)
    batch = conjugate_batch(surface, [seed.point.chart], [seed.point.u], [seed.point.v],
                            [seed.du], [seed.dv], cap, T_max, tol)
    if batch.status[0] != OK:
        raise IntegrationError("geodesic could not be continued", float(batch.t_reached[0]),
                               STATUS_NAMES[int(batch.status[0])])
    return [batch.record(0, k) for k in range(batch.count[0])]


def conjugate_point(surface, seed: UnitTangent, p: int, T_max=50.0, tol=DEFAULT_TOL):
    """The ``|p|``-th conjugate point, following ``-seed`` when ``p < 0``.

    Returns ``None`` when fewer than ``|p|`` zeros occur before ``T_max``.
    The returned ``tau`` carries the sign of ``p``; ``p = 0`` gives the seed
    point itself with ``tau = 0``.
    """
    if p == 0:
        return ConjugateRecord(0, 0.0, seed.point, (seed.du, seed.dv), 1.0, False)
    s = seed if p > 0 else seed.reversed()
    recs = conjugate_distances(surface, s, T_max, abs(p), tol)
    if len(recs) < abs(p):
        return None
    r = recs[abs(p) - 1]
    if p < 0:
        r = ConjugateRecord(p, -r.tau, r.point, r.velocity, r.dJ, r.degenerate)
    return r
