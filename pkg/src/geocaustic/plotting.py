"""SVG rendering of envelope decompositions in chart coordinates.

Each chart that carries data gets its own panel with the chart's domain
boundary drawn; polylines are split where they change chart or jump across
a periodic seam.  The output is byte-reproducible: the SVG id salt is fixed
and no date is embedded.
"""

from __future__ import annotations

import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SVG_SALT = "geocaustic"


def _runs(charts, u, v, periods):
    """Split a sampled line into pieces drawable in a single chart."""
    charts = np.asarray(charts)
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if u.size == 0:
        return []
    cut = np.zeros(u.size, bool)
    cut[1:] = charts[1:] != charts[:-1]
    per = np.array([periods[c] for c in charts])
    jump = np.zeros(u.size, bool)
    jump[1:] = (per[1:] > 0) & (np.abs(np.diff(u)) > 0.5 * np.where(per[1:] > 0, per[1:], 1))
    starts = np.flatnonzero(cut | jump | ~np.isfinite(u))
    bounds = [0] + [int(s) for s in starts if s > 0] + [u.size]
    # rejoin pieces of a run that only crosses the periodic seam without winding
    merged = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if merged and not cut[a] and np.isfinite(u[a]) and jump[a]:
            pa = merged[-1][0]
            seg = np.unwrap(u[pa:b], period=per[a])
            if np.ptp(seg) < per[a]:
                merged[-1] = (pa, b)
                continue
        merged.append((a, b))
    out = []
    for a, b in merged:
        if b - a < 1 or not np.all(np.isfinite(u[a:b])):
            continue
        uu = u[a:b]
        if per[a] > 0:
            uu = np.unwrap(uu, period=per[a])
            mid = 0.5 * (uu.min() + uu.max())
            uu = uu - per[a] * np.round(mid / per[a])
        out.append((int(charts[a]), uu, v[a:b]))
    return out


def _condition(surface, charts, u, v):
    out = np.ones(np.shape(u))
    for c in np.unique(charts):
        sel = charts == c
        E, F, G = surface.charts[c].metric(u[sel], v[sel])
        root = np.sqrt((E - G) ** 2 + 4 * F * F)
        out[sel] = (E + G + root) / np.maximum(E + G - root, 1e-300)
    return out


def _unify(surface, charts, u, v, dom=None):
    """Move samples into chart ``dom`` (default: the most used one) where that
    chart is not much worse conditioned, so lines are not broken at chart
    switches."""
    charts = np.atleast_1d(np.asarray(charts, int)).copy()
    u = np.atleast_1d(np.array(u, float))
    v = np.atleast_1d(np.array(v, float))
    if len(surface.charts) < 2 or u.size == 0:
        return charts, u, v
    if dom is None:
        dom = int(np.bincount(charts).argmax())
    move = np.flatnonzero(charts != dom)
    if move.size == 0:
        return charts, u, v
    tu, tv = surface.transfer(charts[move], np.full(move.size, dom), u[move], v[move])
    own = _condition(surface, charts[move], u[move], v[move])
    target = _condition(surface, np.full(move.size, dom), tu, tv)
    ok = np.isfinite(tu) & np.isfinite(tv) & (target <= np.maximum(4 * own, 10.0))
    k = move[ok]
    charts[k], u[k], v[k] = dom, tu[ok], tv[ok]
    return charts, u, v


def _draw_domain(ax, domain):
    (u0, u1), (v0, v1) = domain
    style = {"color": "0.6", "lw": 0.8, "ls": ":", "zorder": 0}
    for x in (u0, u1):
        if math.isfinite(x):
            ax.axvline(x, **style)
    for y in (v0, v1):
        if math.isfinite(y):
            ax.axhline(y, **style)


def render_decomposition(dec, title=None, cloud=None):
    """SVG bytes for an envelope decomposition.

    The curve is black, caustic branches are colored by ``|p|``,
    inflectional geodesics are dashed, cusps are marked with crosses and
    self-intersections with circles.  An optional naif cloud is drawn as
    small grey dots underneath.
    """
    surface = dec.curve.surface
    periods = [ch.u_period or 0.0 for ch in surface.charts]
    pieces = []  # (chart, u, v, style)
    orders = sorted(abs(p) for p in dec.branches if p != 0)
    top = max(orders) if orders else 1
    cmap = plt.get_cmap("viridis")
    marks = []
    for p in sorted(dec.branches, key=lambda q: (abs(q), q)):
        b = dec.branches[p]
        if p == 0:
            style = {"color": "black", "lw": 1.6, "zorder": 3}
        else:
            style = {"color": cmap(0.85 * (abs(p) - 1) / max(top - 1, 1)), "lw": 1.0,
                     "zorder": 2}
        all_charts = np.concatenate([c.charts for c in b.components] or [[dec.curve.chart]])
        main = int(np.bincount(np.asarray(all_charts, int)).argmax())
        for k, c in enumerate(b.components):
            u, v, ch = c.u, c.v, c.charts
            if c.closed and len(c) > 1:
                u, v, ch = np.append(u, u[0]), np.append(v, v[0]), np.append(ch, ch[0])
            ch, u, v = _unify(surface, ch, u, v, dom=main)
            for j, piece in enumerate(_runs(ch, u, v, periods)):
                lab = None
                if k == 0 and j == 0:
                    lab = "curve" if p == 0 else f"p = {p}"
                pieces.append((*piece, dict(style, label=lab)))
        for s in b.singularities:
            if s.kind in ("cusp", "self-intersection"):
                loc = s.location
                c1, u1, v1 = _unify(surface, loc.chart, loc.u, loc.v, dom=main)
                marks.append((int(c1[0]), float(u1[0]), float(v1[0]), s.kind))
    for k, g in enumerate(dec.inflectional_geodesics):
        for j, piece in enumerate(_runs(*_unify(surface, g.charts, g.u, g.v), periods)):
            lab = "inflectional geodesic" if k == 0 and j == 0 else None
            pieces.append((*piece, {"color": "tab:red", "lw": 0.9, "ls": "--", "zorder": 1,
                                    "label": lab}))
    used = sorted({c for c, *_ in pieces} | {m[0] for m in marks}) or [dec.curve.chart]
    fig, axes = plt.subplots(1, len(used), figsize=(5.5 * len(used), 5.0), squeeze=False)
    for ax, c in zip(axes[0], used):
        _draw_domain(ax, surface.charts[c].domain)
        if cloud is not None and len(cloud):
            sel = cloud.charts == c
            if np.any(sel):
                ax.plot(cloud.u[sel], cloud.v[sel], ".", color="0.55", ms=1.0, zorder=0,
                        label="nearby-geodesic crossings")
        for cc, u, v, style in pieces:
            if cc == c:
                ax.plot(u, v, **style)
        drawn = [(u, v) for cc, u, v, _ in pieces if cc == c]
        for cc, u, v, kind in marks:
            if cc != c:
                continue
            per = periods[c]
            if per and drawn:
                du = np.concatenate([x for x, _ in drawn])
                dv = np.concatenate([y for _, y in drawn])
                u = min((u + k * per for k in (-1, 0, 1)),
                        key=lambda w: np.min((du - w) ** 2 + (dv - v) ** 2))
            if kind == "cusp":
                ax.plot(u, v, "x", color="tab:orange", ms=7, mew=1.6, zorder=4)
            else:
                ax.plot(u, v, "o", mfc="none", color="tab:purple", ms=7, mew=1.2, zorder=4)
        ax.set_title(f"chart {c} ({surface.charts[c].name})")
        ax.set_xlabel("u")
        ax.set_ylabel("v")
        handles, labels = ax.get_legend_handles_labels()
        if handles:
            ax.legend(fontsize=7, loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _svg_bytes(fig)


def _svg_bytes(fig):
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()
