"""Bohmian velocity fields, trajectories and the two-time flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import integrator
from .errors import ArityError, DomainError, InvalidParameterError, NodeEncounterError
from .propagate import TwoTimeWave


def velocity(wave, q, t):
    """Bohmian velocity ``Im(grad phi / phi)`` of ``wave`` at configurations ``q``.

    Returns ``(v, node)``; ``v`` is zero where ``node`` is set.
    """
    return wave.velocity(q, t)


def multitime_velocity(wave, x, y, t, s):
    """Two-time velocity pair ``(v_x, v_y, node)`` of a two-particle wave.

    ``wave`` may be a :class:`TwoTimeWave` or a two-particle state whose
    clocks are then read as the base time.
    """
    if not isinstance(wave, TwoTimeWave):
        wave = TwoTimeWave(wave)
    return wave.velocity(x, y, t, s)


class Trajectory:
    """Knots ``(t_j, q_j, v_j)`` of one integrated path with Hermite dense output.

    When step midpoints are stored the interpolant is quartic, otherwise
    cubic.
    """

    def __init__(self, times, positions, velocities, status=integrator.OK, mids=None):
        self.times = np.asarray(times, dtype=float)
        self.positions = np.asarray(positions, dtype=float)
        self.velocities = np.asarray(velocities, dtype=float)
        self.mids = None if mids is None else np.asarray(mids, dtype=float)
        self.status = int(status)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("trajectory knots must be strictly increasing")

    @property
    def num_particles(self):
        return self.positions.shape[1]

    @property
    def dimension(self):
        return self.positions.shape[2]

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def _segment(self, t):
        j = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(j, 0, max(self.times.size - 2, 0))

    def __call__(self, t):
        """Configuration(s) at time(s) ``t`` inside the knot range."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_start - 1e-12) or np.any(t > self.t_end + 1e-12):
            raise DomainError("time outside the integrated range")
        if self.times.size == 1:
            return np.broadcast_to(self.positions[0], t.shape + self.positions.shape[1:]).copy()
        j = self._segment(t)
        tt = t[..., None, None]
        mid = None if self.mids is None else self.mids[j + 1]
        return integrator.hermite(tt, self.times[j][..., None, None], self.times[j + 1][..., None, None],
                                  self.positions[j], self.positions[j + 1],
                                  self.velocities[j], self.velocities[j + 1], mid)


@dataclass
class TrajectoryBundle:
    """Many trajectories stored row-compressed (see :class:`integrator.BatchResult`)."""

    offsets: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    mids: np.ndarray
    status: np.ndarray

    @classmethod
    def from_batch(cls, res, P, d):
        m = res.times.size
        return cls(res.offsets, res.times, res.states.reshape(m, P, d),
                   res.slopes.reshape(m, P, d), res.mids.reshape(m, P, d), res.status)

    def __len__(self):
        return self.offsets.size - 1

    @property
    def failed(self):
        return self.status != integrator.OK

    def __getitem__(self, i):
        sl = slice(self.offsets[i], self.offsets[i + 1])
        return Trajectory(self.times[sl], self.positions[sl], self.velocities[sl], self.status[i],
                          self.mids[sl])

    def endpoints(self):
        last = self.offsets[1:] - 1
        return self.times[last], self.positions[last]

    def at_knot_time(self, t):
        """Positions of every row at a checkpoint time ``t`` (NaN where absent)."""
        out = np.full((len(self),) + self.positions.shape[1:], np.nan)
        hit = np.flatnonzero(self.times == t)
        rows = np.searchsorted(self.offsets, hit, side="right") - 1
        out[rows] = self.positions[hit]
        return out


def _field(wave, P, d):
    def fun(t, y):
        v, node = wave.velocity(y.reshape(-1, P, d), t)
        return v.reshape(y.shape[0], P * d), node
    return fun


def integrate_ensemble(wave, q0, t0, t1, tol=1e-8, max_step=1.0, checkpoints=(), stop=None,
                       max_steps=100000):
    """Integrate the Bohmian law of motion for a batch of initial configurations.

    Parameters
    ----------
    wave : object with ``velocity(q, t)``, ``num_particles`` and ``dimension``
    q0 : ndarray, shape (n, P, d)
    stop : callable, optional
        ``stop(t, q) -> mask`` with ``q`` shaped ``(m, P, d)``.
    """
    P, d = wave.num_particles, wave.dimension
    q0 = np.asarray(q0, dtype=float).reshape(-1, P, d)
    n = q0.shape[0]
    if np.any(np.asarray(t1) < t0):
        raise InvalidParameterError("backward integration is not supported")
    wrapped = None
    if stop is not None:
        def wrapped(t, y):
            return stop(t, y.reshape(-1, P, d))
    res = integrator.dopri5(_field(wave, P, d), t0, q0.reshape(n, P * d), t1, tol=tol,
                            max_step=max_step, checkpoints=checkpoints, stop=wrapped,
                            max_steps=max_steps)
    return TrajectoryBundle.from_batch(res, P, d)


def integrate_trajectory(wave, q0, t0, t1, tol=1e-8, max_step=1.0, checkpoints=()):
    """Single trajectory; raises :class:`NodeEncounterError` if the step size collapses."""
    P, d = wave.num_particles, wave.dimension
    q0 = np.asarray(q0, dtype=float).reshape(1, P, d)
    if t1 == t0:
        v, node = wave.velocity(q0, np.array([t0]))
        if node[0]:
            raise NodeEncounterError("initial configuration is a node", t0, q0[0])
        return Trajectory([t0], q0, v)
    bundle = integrate_ensemble(wave, q0, t0, t1, tol=tol, max_step=max_step, checkpoints=checkpoints)
    traj = bundle[0]
    if bundle.status[0] != integrator.OK:
        raise NodeEncounterError("step size underflow along the trajectory", traj.t_end, traj.positions[-1])
    return traj


def gaussian_trajectory(center, momentum, width, q0, t):
    """Closed-form Bohmian path of a free isotropic Gaussian packet."""
    center, momentum, q0 = (np.asarray(a, dtype=float) for a in (center, momentum, q0))
    t = np.asarray(t, dtype=float)[..., None]
    spread = np.sqrt(1 + t**2 / (4 * width**4))
    return center + momentum * t + (q0 - center) * spread


@dataclass(frozen=True)
class TwoTimeFlowPoint:
    initial: np.ndarray
    t: float
    s: float
    x: np.ndarray
    y: np.ndarray


def two_time_flow_ensemble(state, q0, t, s, tol=1e-8, max_step=1.0):
    """``(X(t), Y(s))`` for every row of ``q0`` from one single-time pair integration.

    Returns ``(x, y, bundle)`` where ``bundle`` holds the pair paths up to
    ``max(t, s)``.
    """
    if state.num_particles != 2:
        raise ArityError("the two-time flow needs two particles")
    if t < 0 or s < 0:
        raise DomainError("flow times must be nonnegative")
    q0 = np.asarray(q0, dtype=float).reshape(-1, 2, state.dimension)
    horizon = max(t, s)
    if horizon == 0:
        return q0[:, 0].copy(), q0[:, 1].copy(), None
    bundle = integrate_ensemble(state, q0, 0.0, horizon, tol=tol, max_step=max_step,
                                checkpoints=[c for c in (t, s) if c > 0])
    if bundle.failed.any():
        i = int(np.flatnonzero(bundle.failed)[0])
        tr = bundle[i]
        raise NodeEncounterError(f"pair trajectory {i} hit a node", tr.t_end, tr.positions[-1])
    at_t = q0 if t == 0 else bundle.at_knot_time(t)
    at_s = q0 if s == 0 else bundle.at_knot_time(s)
    return at_t[:, 0], at_s[:, 1], bundle


def two_time_flow(state, q0, t, s, tol=1e-8):
    """Two-time Bohmian flow ``Phi_{t,s}(q0) = (X(t; q0), Y(s; q0))``."""
    x, y, _ = two_time_flow_ensemble(state, q0, t, s, tol)
    return TwoTimeFlowPoint(np.asarray(q0, dtype=float).reshape(2, -1), float(t), float(s), x[0], y[0])


def independence_residual(state, q0, t, s, tol=1e-8, return_all=False):
    """Distance between single-time and two-time velocities along the flow.

    For each initial pair returns
    ``|v^x_t(X(t), Y(t)) - v^x_{t,s}(X(t), Y(s))|`` and the analogous
    ``y`` quantity with single-time velocity taken at time ``s``.
    A single configuration gives a pair of floats; a batch gives arrays.
    """
    q0 = np.asarray(q0, dtype=float)
    single = q0.ndim <= 2 and q0.size == 2 * state.dimension
    q0 = q0.reshape(-1, 2, state.dimension)
    horizon = max(t, s)
    marks = [c for c in (t, s) if c > 0]
    bundle = integrate_ensemble(state, q0, 0.0, horizon, tol=tol, checkpoints=marks) if horizon > 0 else None
    if bundle is not None and bundle.failed.any():
        i = int(np.flatnonzero(bundle.failed)[0])
        tr = bundle[i]
        raise NodeEncounterError(f"pair trajectory {i} hit a node", tr.t_end, tr.positions[-1])
    pt = q0 if t == 0 else bundle.at_knot_time(t)
    ps = q0 if s == 0 else bundle.at_knot_time(s)
    n = q0.shape[0]
    vt, _ = state.velocity(pt, np.full(n, float(t)))
    vs, _ = state.velocity(ps, np.full(n, float(s)))
    wave = TwoTimeWave(state, t, s)
    vx2, vy2, _ = wave.velocity(pt[:, 0], ps[:, 1])
    rx = np.linalg.norm(vt[:, 0] - vx2, axis=1)
    ry = np.linalg.norm(vs[:, 1] - vy2, axis=1)
    if single and not return_all:
        return float(rx[0]), float(ry[0])
    return rx, ry
