"""Batched Dormand-Prince 5(4) integration with per-row step control.

Every row of the batch carries its own time and step size, so one call
advances thousands of independent trajectories with vectorised right-hand
side evaluations.  Accepted knots are kept as ``(t, y, f)`` for cubic
Hermite dense output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# continuous extension of the pair evaluated at the step midpoint
_BMID = np.array([0.10013431883002388, 0.0, 0.3918321794184261, -0.02982460176594826,
                  0.05893268337240798, -0.04497888809104356, 0.02390430823613399])

OK, NODE, STEP_LIMIT = 0, 1, 2


@dataclass
class BatchResult:
    """Knots of every row in compressed-row form.

    Row ``i`` owns ``times[offsets[i]:offsets[i+1]]`` and the matching
    ``states``/``slopes``; ``mids[j]`` is the solution halfway through the
    step that ended at knot ``j`` (NaN at a row's first knot).  ``status`` is ``OK``, ``NODE`` (step size
    collapsed, usually at a wave-function node) or ``STEP_LIMIT``.
    """

    offsets: np.ndarray
    times: np.ndarray
    states: np.ndarray
    slopes: np.ndarray
    mids: np.ndarray
    status: np.ndarray
    n_rejected: np.ndarray

    def row(self, i):
        sl = slice(self.offsets[i], self.offsets[i + 1])
        return self.times[sl], self.states[sl], self.slopes[sl], self.mids[sl]


def hermite(t, t0, t1, y0, y1, f0, f1, ymid=None):
    """Hermite interpolant on ``[t0, t1]`` evaluated at ``t`` (broadcasting).

    Cubic from end values and slopes; quartic when the midpoint value
    ``ymid`` is also given.
    """
    h = t1 - t0
    s = np.where(h > 0, (t - t0) / np.where(h > 0, h, 1.0), 0.0)
    s = s[..., None] if np.ndim(y0) > np.ndim(s) else s
    h = h[..., None] if np.ndim(y0) > np.ndim(h) else h
    s2, s3 = s * s, s * s * s
    cubic = ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * f0
             + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * f1)
    if ymid is None:
        return cubic
    at_half = 0.5 * (y0 + y1) + 0.125 * h * (f0 - f1)
    return cubic + 16.0 * (ymid - at_half) * s2 * (1 - s) ** 2


def hermite_derivative(t, t0, t1, y0, y1, f0, f1, ymid=None):
    """Time derivative of :func:`hermite` at ``t``."""
    h = t1 - t0
    hs = np.where(h > 0, h, 1.0)
    s = np.where(h > 0, (t - t0) / hs, 0.0)
    s = s[..., None] if np.ndim(y0) > np.ndim(s) else s
    h = h[..., None] if np.ndim(y0) > np.ndim(h) else h
    hs = hs[..., None] if np.ndim(y0) > np.ndim(hs) else hs
    s2 = s * s
    d = ((6 * s2 - 6 * s) * (y0 - y1) / hs + (3 * s2 - 4 * s + 1) * f0 + (3 * s2 - 2 * s) * f1)
    if ymid is None:
        return d
    at_half = 0.5 * (y0 + y1) + 0.125 * h * (f0 - f1)
    return d + 32.0 * (ymid - at_half) * s * (1 - s) * (1 - 2 * s) / hs


def dopri5(fun, t0, y0, t_end, tol=1e-8, max_step=1.0, first_step=None, checkpoints=(),
           stop=None, max_steps=100000, min_step_rel=1e-12):
    """Integrate ``y' = fun(t, y)`` for a batch of rows.

    Parameters
    ----------
    fun : callable
        ``fun(t, y) -> (dy, bad)`` with ``t`` shaped ``(m,)``, ``y`` shaped
        ``(m, D)`` and ``bad`` a boolean mask of rows where the field is not
        usable (a node); those stages are rejected and the step shrinks.
    t0, t_end : float or array of shape (n,)
    y0 : ndarray, shape (n, D)
    tol : float
        Absolute per-step error bound (max norm over components).
    checkpoints : sequence of float
        Times every row must land on exactly.
    stop : callable, optional
        ``stop(t, y) -> bool mask``; rows for which it is true after an
        accepted step are finished early.

    Returns
    -------
    BatchResult
    """
    y0 = np.asarray(y0, dtype=float)
    n, D = y0.shape
    t = np.broadcast_to(np.asarray(t0, dtype=float), (n,)).copy()
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (n,)).copy()
    marks = np.unique(np.asarray(list(checkpoints), dtype=float))
    y = y0.copy()
    f, bad = fun(t, y)
    f = np.array(f, dtype=float, copy=True)
    status = np.zeros(n, dtype=np.int8)
    status[bad] = NODE
    if first_step is None:
        scale = np.maximum(np.abs(f).max(axis=1), 1e-3)
        h = np.minimum(max_step, 0.1 * tol ** 0.2 / scale)
    else:
        h = np.full(n, float(first_step))
    active = (~bad) & (t < t_end)
    nrej = np.zeros(n, dtype=np.int64)

    rows = [np.arange(n)]
    ts, ys, fs, ms = [t.copy()], [y.copy()], [f.copy()], [np.full_like(y, np.nan)]
    K = np.empty((7, n, D))
    steps = 0
    while active.any():
        steps += 1
        if steps > max_steps:
            status[active] = STEP_LIMIT
            break
        idx = np.flatnonzero(active)
        ti, yi, hi = t[idx], y[idx], h[idx]
        limit = t_end[idx]
        if marks.size:
            nxt = np.searchsorted(marks, ti, side="right")
            has = nxt < marks.size
            lim2 = np.where(has, marks[np.minimum(nxt, marks.size - 1)], np.inf)
            limit = np.minimum(limit, lim2)
        hi = np.minimum(hi, max_step)
        land = ti + hi >= limit - 1e-12 * np.maximum(1.0, np.abs(limit))
        hi = np.where(land, limit - ti, hi)
        k = K[:, : idx.size]
        k[0] = f[idx]
        badstep = np.zeros(idx.size, dtype=bool)
        for s in range(1, 7):
            ys_ = yi + hi[:, None] * np.tensordot(np.asarray(_A[s]), k[:s], axes=(0, 0))
            k[s], b = fun(ti + _C[s] * hi, ys_)
            badstep |= b
        y5 = ys_  # stage 7 is evaluated at the 5th-order solution
        err = np.abs(hi[:, None] * np.tensordot(_E, k, axes=(0, 0))).max(axis=1) / tol
        err = np.where(badstep | ~np.isfinite(err), np.inf, err)
        ok = err <= 1.0
        fac = np.where(err > 0, 0.9 * np.power(np.where(err > 0, err, 1.0), -0.2), 5.0)
        fac = np.clip(np.nan_to_num(fac, nan=0.2, posinf=5.0), 0.2, 5.0)
        fac = np.where(np.isinf(err), 0.25, fac)

        acc = idx[ok]
        if acc.size:
            t_new = np.where(land[ok], limit[ok], ti[ok] + hi[ok])
            t[acc] = t_new
            y[acc] = y5[ok]
            f[acc] = k[6][ok]
            rows.append(acc)
            ts.append(t_new)
            ys.append(y5[ok])
            fs.append(k[6][ok])
            ms.append(yi[ok] + hi[ok, None] * np.tensordot(_BMID, k[:, ok], axes=(0, 0)))
            done = t[acc] >= t_end[acc]
            if stop is not None:
                done |= np.asarray(stop(t[acc], y[acc]), dtype=bool)
            active[acc[done]] = False
        # a step shortened to land on a mark says little about the next one
        h[idx] = np.where(ok & land, np.maximum(h[idx], hi * fac), hi * fac)
        rej = idx[~ok]
        nrej[rej] += 1
        tiny = h[rej] < min_step_rel * np.maximum(1.0, np.abs(t[rej]))
        status[rej[tiny]] = NODE
        active[rej[tiny]] = False

    rows = np.concatenate(rows)
    order = np.lexsort((np.concatenate(ts), rows))
    rows = rows[order]
    counts = np.bincount(rows, minlength=n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return BatchResult(offsets, np.concatenate(ts)[order], np.concatenate(ys)[order],
                       np.concatenate(fs)[order], np.concatenate(ms)[order], status, nrej)
