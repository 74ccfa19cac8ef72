"""Point sets and polylines on a surface, with local metric distances.

Distances between nearby points are measured in the chart of the query
point with the metric frozen there, which is accurate to second order in
the separation.  Candidate neighbours are found with a KD-tree on the
surface's proxy coordinates (:meth:`Surface.embed`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class Polyline:
    """Ordered samples ``(charts, u, v)``; ``closed`` joins the last to the first."""

    charts: np.ndarray
    u: np.ndarray
    v: np.ndarray
    closed: bool = False
    tag: object = None

    def __post_init__(self):
        self.u = np.atleast_1d(np.asarray(self.u, float))
        self.v = np.atleast_1d(np.asarray(self.v, float))
        self.charts = np.broadcast_to(np.asarray(self.charts, int), self.u.shape).copy()

    def __len__(self):
        return self.u.size


@dataclass
class PointCloud:
    charts: np.ndarray
    u: np.ndarray
    v: np.ndarray
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.atleast_1d(np.asarray(self.u, float))
        self.v = np.atleast_1d(np.asarray(self.v, float))
        self.charts = np.broadcast_to(np.asarray(self.charts, int), self.u.shape).copy()

    def __len__(self):
        return self.u.size


def relative_coordinates(surface, target_chart, ref_u, charts, u, v):
    """Coordinates of points in ``target_chart``; periodic ``u`` is unwrapped
    to lie within half a period of ``ref_u``."""
    target_chart = np.broadcast_to(np.asarray(target_chart, int), np.shape(u))
    charts = np.broadcast_to(np.asarray(charts, int), np.shape(u))
    u = np.array(u, float)
    v = np.array(v, float)
    move = charts != target_chart
    if np.any(move):
        u[move], v[move] = surface.transfer(charts[move], target_chart[move], u[move], v[move])
    for c, ch in enumerate(surface.charts):
        if ch.u_period:
            sel = target_chart == c
            per = ch.u_period
            ref = np.broadcast_to(ref_u, u.shape)[sel]
            u[sel] = ref + (np.mod(u[sel] - ref + per / 2, per) - per / 2)
    return u, v


def metric_arrays(surface, charts, u, v):
    E = np.empty(np.shape(u))
    F = np.empty(np.shape(u))
    G = np.empty(np.shape(u))
    for c in np.unique(charts):
        sel = charts == c
        E[sel], F[sel], G[sel] = surface.charts[c].metric(u[sel], v[sel])
    return E, F, G


def local_distance(surface, charts, u, v, charts2, u2, v2):
    """Local metric distance between paired points (same length arrays)."""
    pu, pv = relative_coordinates(surface, charts, u, charts2, u2, v2)
    E, F, G = metric_arrays(surface, charts, u, v)
    a, b = pu - u, pv - v
    return np.sqrt(np.maximum(E * a * a + 2 * F * a * b + G * b * b, 0.0))


def _proxies(surface, charts, u, v):
    return np.atleast_2d(surface.embed(charts, u, v))


def _stack_lines(lines):
    charts = np.concatenate([ln.charts for ln in lines]) if lines else np.zeros(0, int)
    u = np.concatenate([ln.u for ln in lines]) if lines else np.zeros(0)
    v = np.concatenate([ln.v for ln in lines]) if lines else np.zeros(0)
    # index of the next vertex along the line, -1 if none
    nxt = []
    off = 0
    for ln in lines:
        n = len(ln)
        idx = np.arange(off + 1, off + n + 1)
        if ln.closed and n > 1:
            idx[-1] = off
        else:
            idx[-1] = -1
        nxt.append(idx)
        off += n
    nxt = np.concatenate(nxt) if nxt else np.zeros(0, int)
    prv = np.full(nxt.size, -1)
    ok = nxt >= 0
    prv[nxt[ok]] = np.flatnonzero(ok)
    return charts, u, v, nxt, prv


class PolylineIndex:
    """Nearest-distance queries against a set of polylines."""

    def __init__(self, surface, lines, k=12):
        self.surface = surface
        self.lines = [ln for ln in lines if len(ln)]
        self.charts, self.u, self.v, self.nxt, self.prv = _stack_lines(self.lines)
        self.k = k
        self.tree = cKDTree(_proxies(surface, self.charts, self.u, self.v)) if self.u.size else None

    def __len__(self):
        return self.u.size

    def distance(self, charts, u, v, return_index=False):
        """Distance from each query point to the nearest polyline segment."""
        u = np.atleast_1d(np.asarray(u, float))
        v = np.atleast_1d(np.asarray(v, float))
        charts = np.broadcast_to(np.asarray(charts, int), u.shape)
        if self.tree is None:
            raise ValueError("distance to an empty set")
        k = min(self.k, self.u.size)
        _, idx = self.tree.query(_proxies(self.surface, charts, u, v), k=k)
        idx = np.asarray(idx).reshape(u.size, k)
        best = np.full(u.size, np.inf)
        best_vertex = np.zeros(u.size, int)
        E, F, G = metric_arrays(self.surface, charts, u, v)
        for col in range(k):
            j = idx[:, col]
            for other in (self.nxt[j], self.prv[j], j):
                seg = other >= 0
                o = np.where(seg, other, j)
                d = self._segment_distance(charts, u, v, E, F, G, j, o)
                better = d < best
                best = np.where(better, d, best)
                best_vertex = np.where(better, j, best_vertex)
        return (best, best_vertex) if return_index else best

    def _segment_distance(self, charts, u, v, E, F, G, i0, i1):
        s = self.surface
        au, av = relative_coordinates(s, charts, u, self.charts[i0], self.u[i0], self.v[i0])
        bu, bv = relative_coordinates(s, charts, u, self.charts[i1], self.u[i1], self.v[i1])
        au, av = au - u, av - v
        bu, bv = bu - u - au, bv - v - av

        def dot(x1, y1, x2, y2):
            return E * x1 * x2 + F * (x1 * y2 + y1 * x2) + G * y1 * y2

        bb = dot(bu, bv, bu, bv)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(bb > 0, -dot(au, av, bu, bv) / np.where(bb > 0, bb, 1), 0.0)
        t = np.clip(t, 0.0, 1.0)
        x, y = au + t * bu, av + t * bv
        return np.sqrt(np.maximum(dot(x, y, x, y), 0.0))


class CloudIndex:
    """Nearest-point queries against a point cloud."""

    def __init__(self, surface, cloud: PointCloud, k=8):
        self.surface = surface
        self.cloud = cloud
        self.k = k
        self.tree = (cKDTree(_proxies(surface, cloud.charts, cloud.u, cloud.v))
                     if len(cloud) else None)

    def distance(self, charts, u, v):
        u = np.atleast_1d(np.asarray(u, float))
        v = np.atleast_1d(np.asarray(v, float))
        charts = np.broadcast_to(np.asarray(charts, int), u.shape)
        if self.tree is None:
            return np.full(u.size, np.inf)
        k = min(self.k, len(self.cloud))
        _, idx = self.tree.query(_proxies(self.surface, charts, u, v), k=k)
        idx = np.asarray(idx).reshape(u.size, k)
        best = np.full(u.size, np.inf)
        c = self.cloud
        for col in range(k):
            j = idx[:, col]
            d = local_distance(self.surface, charts, u, v, c.charts[j], c.u[j], c.v[j])
            best = np.minimum(best, d)
        return best


def hausdorff_distance(surface, A, B):
    """Symmetric discrete Hausdorff distance between two polyline sets.

    ``A`` and ``B`` are lists of :class:`Polyline` (or a single one).
    Vertices of each set are measured against the segments of the other.
    """
    A = [A] if isinstance(A, Polyline) else list(A)
    B = [B] if isinstance(B, Polyline) else list(B)
    if not sum(len(x) for x in A) or not sum(len(x) for x in B):
        raise ValueError("Hausdorff distance of an empty set")
    ia, ib = PolylineIndex(surface, A), PolylineIndex(surface, B)
    d_ab = ib.distance(ia.charts, ia.u, ia.v).max()
    d_ba = ia.distance(ib.charts, ib.u, ib.v).max()
    return float(max(d_ab, d_ba))


def segment_intersections(p, q, pairs):
    """Intersections of 2D segment pairs.

    ``p`` and ``q`` are ``(n, 2, 2)`` arrays of segments (start, end);
    returns params ``(s, t)`` in ``[0, 1]`` and a validity mask for each
    row of ``pairs`` (indices into ``p`` and ``q``).
    """
    a0, a1 = p[pairs[:, 0], 0], p[pairs[:, 0], 1]
    b0, b1 = q[pairs[:, 1], 0], q[pairs[:, 1], 1]
    da = a1 - a0
    db = b1 - b0
    w = b0 - a0
    den = da[:, 0] * db[:, 1] - da[:, 1] * db[:, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (w[:, 0] * db[:, 1] - w[:, 1] * db[:, 0]) / den
        t = (w[:, 0] * da[:, 1] - w[:, 1] * da[:, 0]) / den
    ok = (den != 0) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    return s, t, ok


def wrap_angle(x):
    return (x + math.pi) % (2 * math.pi) - math.pi
