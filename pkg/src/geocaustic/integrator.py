"""Vectorized Dormand-Prince 5(4) marcher for the geodesic + Jacobi system.

The state of one member is ``(u, v, u', v', J, J')``; a batch is an array of
shape ``(6, m)``.  All members share one step size (error control takes the
worst member), but every member lives in its own chart.  Sharing the step
sequence keeps nearby members' truncation errors correlated, which is what
makes differences between neighbouring geodesics trustworthy.
"""

from __future__ import annotations

import numpy as np

# Dormand-Prince tableau and the 4th-order continuous extension
C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

OK, LEFT_ATLAS, TOLERANCE = 0, 1, 2
H_MIN = 1e-12


class IntegrationError(RuntimeError):
    """A geodesic could not be continued; ``t`` is the arc length reached."""

    def __init__(self, message, t=None, kind="tolerance-failure"):
        self.t = t
        self.kind = kind
        super().__init__(message if t is None else f"{message} (reached t={t:.6g})")


def _combine(coeffs, k):
    # explicit sum instead of a BLAS contraction: bitwise reproducible
    out = None
    for c, ks in zip(coeffs, k):
        if c != 0:
            out = c * ks if out is None else out + c * ks
    return out


def geodesic_rhs(surface, y, charts):
    u, v, du, dv, J, dJ = y
    out = np.empty_like(y)
    out[0] = du
    out[1] = dv
    out[4] = dJ
    if charts.size and charts.min() == charts.max():
        groups = [(int(charts[0]), slice(None))]
    else:
        groups = [(int(c), charts == c) for c in np.unique(charts)]
    for c, sel in groups:
        (g111, g112, g122, g211, g212, g222), K = surface.charts[c].geometry(u[sel], v[sel])
        a, b = du[sel], dv[sel]
        aa, ab, bb = a * a, a * b, b * b
        out[2, sel] = -(g111 * aa + 2 * g112 * ab + g122 * bb)
        out[3, sel] = -(g211 * aa + 2 * g212 * ab + g222 * bb)
        out[5, sel] = -K * J[sel]
    return out


class Step:
    """One accepted step; offers the continuous extension on ``[t0, t0 + h]``.

    ``members`` maps the step's columns back to batch indices.
    """

    __slots__ = ("t0", "h", "y0", "y1", "k", "charts", "members")

    def __init__(self, t0, h, y0, y1, k, charts, members):
        self.t0 = t0
        self.h = h
        self.y0 = y0
        self.y1 = y1
        self.k = k
        self.charts = charts
        self.members = members

    @property
    def t1(self):
        return self.t0 + self.h

    def dense(self, theta, cols=slice(None)):
        """State at ``t0 + theta h``; ``theta`` scalar or one value per column."""
        theta = np.asarray(theta, float)
        powers = np.stack([theta, theta**2, theta**3, theta**4])
        b = [sum(P[s, j] * powers[j] for j in range(4)) for s in range(7)]
        k = self.k[:, :, cols]
        incr = sum(b[s] * k[s] for s in range(7) if s != 1)
        return self.y0[:, cols] + self.h * incr

    def take(self, cols):
        """Copy of this step restricted to some columns (for storage)."""
        return Step(self.t0, self.h, self.y0[:, cols].copy(), self.y1[:, cols].copy(),
                    self.k[:, :, cols].copy(), self.charts[cols].copy(), self.members[cols])


def bracketed_root(fun, lo, hi, flo, fhi, xtol, maxiter=100):
    """Vectorized Illinois false-position on brackets ``[lo, hi]``.

    ``fun(x, active)`` evaluates the functions whose indices are in
    ``active`` at points ``x``.  ``flo`` and ``fhi`` must differ in sign.
    """
    lo = np.array(lo, float)
    hi = np.array(hi, float)
    flo = np.array(flo, float)
    fhi = np.array(fhi, float)
    xtol = np.broadcast_to(np.asarray(xtol, float), lo.shape)
    side = np.zeros(lo.shape, int)
    idx = np.arange(lo.size)
    for _ in range(maxiter):
        active = np.abs(hi - lo) > xtol
        if not np.any(active):
            break
        a = idx[active]
        denom = fhi[a] - flo[a]
        x = np.where(denom != 0, hi[a] - fhi[a] * (hi[a] - lo[a]) / np.where(denom != 0, denom, 1),
                     0.5 * (lo[a] + hi[a]))
        # keep away from the ends so the bracket always shrinks
        width = hi[a] - lo[a]
        x = np.clip(x, lo[a] + 0.01 * width, hi[a] - 0.01 * width)
        fx = fun(x, a)
        left = np.sign(fx) == np.sign(flo[a])
        exact = fx == 0
        ia, ib = a[left & ~exact], a[~left & ~exact]
        lo[ia], flo[ia] = x[left & ~exact], fx[left & ~exact]
        fhi[ia] = np.where(side[ia] == 1, 0.5 * fhi[ia], fhi[ia])
        side[ia] = 1
        hi[ib], fhi[ib] = x[~left & ~exact], fx[~left & ~exact]
        flo[ib] = np.where(side[ib] == -1, 0.5 * flo[ib], flo[ib])
        side[ib] = -1
        ie = a[exact]
        lo[ie] = hi[ie] = x[exact]
    return 0.5 * (lo + hi)


def prepare(surface, charts, y):
    """Move initial states into their preferred charts."""
    charts = np.asarray(charts, int).copy()
    want = surface.preferred_chart(charts, y[0], y[1])
    move = want != charts
    if np.any(move):
        u, v, du, dv = surface.transfer(charts[move], want[move], y[0, move], y[1, move],
                                        y[2, move], y[3, move])
        y = y.copy()
        y[0, move], y[1, move], y[2, move], y[3, move] = u, v, du, dv
        charts[move] = want[move]
    return charts, y


def march(surface, y0, charts, t_end, tol, on_step=None, leaders=None, h0=None,
          max_steps=1_000_000):
    """Integrate every member from ``t = 0`` to ``t_end`` (either sign).

    Parameters
    ----------
    y0 : (6, m) array
    charts : (m,) int array
    on_step : callable, optional
        ``on_step(step) -> bool array`` over ``step.members``; True retires
        that member (its state is frozen at the end of the step).
    leaders : (m,) int array, optional
        Members follow the chart choice of their leader, so that groups of
        nearby geodesics are always expressed in a common chart.

    Returns
    -------
    dict with ``y`` (final or retirement states), ``charts``, ``status``
    (OK / LEFT_ATLAS / TOLERANCE) and ``t`` (arc length reached).
    """
    y0 = np.array(y0, float)
    m = y0.shape[1]
    direction = 1.0 if t_end >= 0 else -1.0
    rtol = tol
    atol = tol
    charts, y = prepare(surface, charts, y0)
    if leaders is not None:
        leaders = np.asarray(leaders, int)
        charts, y = _follow(surface, charts, y, leaders, np.arange(m))

    final_y = y.copy()
    final_charts = charts.copy()
    status = np.zeros(m, int)
    t_reached = np.zeros(m)

    members = np.arange(m)
    t = 0.0
    h_max = surface.max_step
    h = direction * min(h0 or 0.01, abs(t_end), h_max) if t_end != 0 else 0.0
    f = geodesic_rhs(surface, y, charts) if m else y.copy()
    steps = 0
    while members.size and direction * (t_end - t) > 1e-14 * max(1.0, abs(t_end)):
        steps += 1
        if steps > max_steps:
            raise IntegrationError("step budget exhausted", t)
        if direction * (t + h - t_end) > 0:
            h = t_end - t
        k = np.empty((7,) + y.shape)
        k[0] = f
        for s in range(1, 6):
            k[s] = geodesic_rhs(surface, y + h * _combine(A[s], k), charts)
        y_new = y + h * _combine(B, k)
        k[6] = geodesic_rhs(surface, y_new, charts)
        err_vec = h * _combine(E, k)
        cscale = surface.coordinate_scale(charts, y[0], y[1])
        mag = np.maximum(np.abs(y), np.abs(y_new))
        scale = rtol * mag
        scale[:4] += atol * cscale
        scale[4:] += atol
        with np.errstate(invalid="ignore", over="ignore"):
            err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=0))
        err = np.where(np.isfinite(err), err, np.inf)
        err_max = err.max()

        if err_max > 1.0:
            factor = max(0.2, 0.9 * err_max ** -0.2) if np.isfinite(err_max) else 0.2
            h_try = h * factor
            if abs(h_try) < H_MIN * max(1.0, abs(t)):
                # drop the members that cannot be integrated further
                bad = err > 1.0
                outside = ~_inside(surface, charts, y_new)
                for j in np.flatnonzero(bad):
                    idx = members[j]
                    final_y[:, idx] = y[:, j]
                    final_charts[idx] = charts[j]
                    t_reached[idx] = t
                    status[idx] = LEFT_ATLAS if outside[j] else TOLERANCE
                keep = ~bad
                members, y, charts, f = members[keep], y[:, keep], charts[keep], f[:, keep]
                if leaders is not None:
                    leaders = leaders  # followers of a dropped leader pick their own chart
                continue
            h = h_try
            continue

        step = Step(t, h, y, y_new, k, charts, members)
        retire = np.zeros(members.size, bool)
        if on_step is not None:
            out = on_step(step)
            if out is not None:
                retire |= np.asarray(out, bool)
        t = t + h
        bad = ~np.all(np.isfinite(y_new), axis=0)
        inside = _inside(surface, charts, y_new)
        new_charts = surface.preferred_chart(charts, y_new[0], y_new[1])
        f_new = k[6]
        y_next = y_new
        move = (new_charts != charts) & ~bad
        if leaders is not None:
            new_charts, move = _leader_charts(new_charts, charts, members, leaders, bad)
        if np.any(move):
            y_next = y_new.copy()
            u, v, du, dv = surface.transfer(charts[move], new_charts[move], y_new[0, move],
                                            y_new[1, move], y_new[2, move], y_new[3, move])
            y_next[0, move], y_next[1, move], y_next[2, move], y_next[3, move] = u, v, du, dv
            inside[move] = _inside(surface, new_charts[move], y_next[:, move])
        charts_next = np.where(move, new_charts, charts)
        left = ~inside & ~bad
        for j in np.flatnonzero(retire | bad | left):
            idx = members[j]
            final_y[:, idx] = y_new[:, j]
            final_charts[idx] = charts[j]
            t_reached[idx] = t if not (bad[j] or left[j]) else t - h
            if left[j] and not retire[j]:
                status[idx] = LEFT_ATLAS
            elif bad[j] and not retire[j]:
                status[idx] = TOLERANCE
        keep = ~(retire | bad | left)
        if np.any(move):
            f_new = f_new.copy()
            mk = move & keep
            if np.any(mk):
                f_new[:, mk] = geodesic_rhs(surface, y_next[:, mk], charts_next[mk])
        members, y, charts, f = members[keep], y_next[:, keep], charts_next[keep], f_new[:, keep]
        factor = min(5.0, 0.9 * err_max ** -0.2) if err_max > 0 else 5.0
        h = direction * min(abs(h) * factor, h_max)

    for j, idx in enumerate(members):
        final_y[:, idx] = y[:, j]
        final_charts[idx] = charts[j]
        t_reached[idx] = t
    return {"y": final_y, "charts": final_charts, "status": status, "t": t_reached}


def _inside(surface, charts, y):
    out = np.ones(charts.size, bool)
    for c in np.unique(charts):
        sel = charts == c
        out[sel] = surface.charts[c].contains(y[0, sel], y[1, sel])
    return out


def _leader_charts(new_charts, charts, members, leaders, bad):
    """Followers adopt the chart their leader will use after this step."""
    pos = {int(mm): j for j, mm in enumerate(members)}
    out = new_charts.copy()
    for j, mm in enumerate(members):
        lead = pos.get(int(leaders[mm]))
        if lead is not None and lead != j:
            out[j] = new_charts[lead]
    move = (out != charts) & ~bad
    return out, move


def _follow(surface, charts, y, leaders, members):
    want, move = _leader_charts(charts, charts, members, leaders, np.zeros(charts.size, bool))
    move = want != charts
    if np.any(move):
        y = y.copy()
        u, v, du, dv = surface.transfer(charts[move], want[move], y[0, move], y[1, move],
                                        y[2, move], y[3, move])
        y[0, move], y[1, move], y[2, move], y[3, move] = u, v, du, dv
        charts = want
    return charts, y
