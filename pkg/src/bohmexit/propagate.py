"""Time evolution of analytic and grid wave functions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ArityError, DomainError, DomainOverflowError, InvalidParameterError, NotAsymptoticError
from .states import AnalyticState, GridState, momentum_amplitude


def free_evolve(state, t):
    """Exact free evolution of every particle by time ``t``."""
    return state.with_times(state.times + float(t))


def multitime_evolve(state, t, s):
    """Evolve particle x by ``t`` and particle y by ``s`` with their own free Hamiltonians."""
    if state.num_particles != 2:
        raise ArityError("two-time evolution needs a two-particle state")
    return TwoTimeWave(state, t, s)


class TwoTimeWave:
    """Two-time wave function ``phi(x, t, y, s) = exp(-i H_x t) exp(-i H_y s) phi_0``.

    ``base`` is the state at ``t = s = 0``; the stored ``(t, s)`` are the
    default clocks used when none are passed.
    """

    def __init__(self, base, t=0.0, s=0.0):
        if base.num_particles != 2:
            raise ArityError("two-time waves need two particles")
        self.base = base
        self.t = float(t)
        self.s = float(s)

    @property
    def state(self):
        """The base state with particle clocks advanced to ``(t, s)``."""
        return self.base.with_times(self.base.times + np.array([self.t, self.s]))

    def _clocks(self, t, s, n):
        t = self.t if t is None else t
        s = self.s if s is None else s
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        s = np.broadcast_to(np.asarray(s, dtype=float), (n,))
        return np.stack([t, s], axis=1)

    def _config(self, x, y):
        x = np.asarray(x, dtype=float).reshape(-1, self.base.dimension)
        y = np.asarray(y, dtype=float).reshape(-1, self.base.dimension)
        return np.stack([x, y], axis=1)

    def __call__(self, x, y, t=None, s=None):
        q = self._config(x, y)
        return self.base(q, self._clocks(t, s, q.shape[0]))

    def density(self, x, y, t=None, s=None):
        q = self._config(x, y)
        return self.base.density(q, self._clocks(t, s, q.shape[0]))

    def derivatives(self, x, y, t=None, s=None):
        q = self._config(x, y)
        return self.base.derivatives(q, self._clocks(t, s, q.shape[0]))

    def velocity(self, x, y, t=None, s=None):
        """Two-time velocity field; returns ``(vx, vy, node)``."""
        q = self._config(x, y)
        v, node = self.base.velocity(q, self._clocks(t, s, q.shape[0]))
        return v[:, 0], v[:, 1], node


def local_plane_wave(state, q, t):
    """Large-time form ``prod_p exp(i x_p^2 / 2 t_p) (i t_p)^(-d/2) * phi_hat(x_1/t_1, ...)``.

    ``t`` is a scalar (all particles) or one time per particle; ``phi_hat`` is
    the momentum amplitude of ``state`` at its own clocks.
    """
    P, d = state.num_particles, state.dimension
    tt = np.broadcast_to(np.asarray(t, dtype=float), (P,))
    if np.any(tt <= 0):
        raise DomainError("local plane wave needs positive times")
    if np.any(tt < 1):
        warnings.warn("local plane wave evaluated outside the t >= 1 regime", stacklevel=2)
    q = np.asarray(q, dtype=float).reshape(-1, P, d)
    amp = momentum_amplitude(state)
    k = q / tt[None, :, None]
    pref = np.exp(1j * (q**2).sum(axis=2) / (2 * tt[None, :])) * (1j * tt[None, :]) ** (-d / 2)
    return np.prod(pref, axis=1) * amp(k)


@dataclass(frozen=True)
class Potential1D:
    """Short-range 1D potential: ``square`` barrier/well or ``gaussian`` bump.

    ``width`` is the full width of the square or the standard deviation of
    the Gaussian; negative ``height`` gives a well.
    """

    kind: str
    height: float
    width: float
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in ("square", "gaussian", "zero"):
            raise InvalidParameterError(f"unknown potential kind {self.kind!r}")
        if self.kind != "zero" and not self.width > 0:
            raise InvalidParameterError("potential width must be positive")

    @classmethod
    def zero(cls):
        return cls("zero", 0.0, 1.0, 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero" or self.height == 0:
            return np.zeros_like(x)
        if self.kind == "square":
            return np.where(np.abs(x - self.center) < 0.5 * self.width, self.height, 0.0)
        return self.height * np.exp(-0.5 * ((x - self.center) / self.width) ** 2)

    @property
    def support_radius(self):
        """Half-width around ``center`` outside which ``|V| < 1e-12``."""
        if self.kind == "zero" or self.height == 0:
            return 0.0
        if self.kind == "square":
            return 0.5 * self.width
        return self.width * np.sqrt(2 * max(np.log(abs(self.height) / 1e-12), 0.0))

    def support_mask(self, x):
        return np.abs(np.asarray(x) - self.center) <= self.support_radius


def square_barrier_transmission(k, height, width):
    """Plane-wave transmission probability of a square barrier (hbar/m = 1)."""
    k = np.abs(np.asarray(k, dtype=float))
    E = 0.5 * k**2
    if height == 0:
        return np.ones_like(k)
    kappa = np.sqrt(2.0 * (height - E) + 0j)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = height**2 * np.sinh(kappa * width) ** 2 / (4.0 * E * (height - E))
        T = 1.0 / (1.0 + ratio.real)
        at_top = np.isclose(E, height, rtol=1e-12, atol=0)
        T = np.where(at_top, 1.0 / (1.0 + height * width**2 / 2.0), T)
    return np.where(k == 0, 0.0, T)


@dataclass
class FluxRecord:
    """Flux and cumulative probability at probe points, one row per step."""

    times: np.ndarray
    positions: np.ndarray
    flux: np.ndarray
    cdf: np.ndarray

    def integrated_flux(self):
        return np.trapezoid(self.flux, self.times, axis=0)


def _wavenumbers(n, dx):
    return 2 * np.pi * np.fft.fftfreq(n, d=dx)


def _check_bandwidth(psi, tol=1e-8):
    spec = np.abs(np.fft.fft(psi))
    n = psi.size
    band = np.zeros(n, dtype=bool)
    idx = np.abs(np.fft.fftfreq(n))
    band[idx > 0.45] = True
    if spec[band].max(initial=0.0) > tol * spec.max():
        raise InvalidParameterError("grid spacing does not resolve the wave's momentum content")


def split_step_evolve(state, V, dt, n_steps, probes=None, check_every=50, boundary_tol=1e-6,
                      bandwidth_tol=1e-8):
    """Strang-split spectral propagation under ``H = -d^2/dx^2 / 2 + V``.

    Parameters
    ----------
    state : GridState
        Not modified; a new state is returned.
    probes : sequence of float, optional
        Points outside the potential support where flux ``Im(psi* psi')``
        and the cumulative probability are recorded after every step.

    Returns
    -------
    GridState, or ``(GridState, FluxRecord)`` when ``probes`` is given.
    """
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    n_steps = int(n_steps)
    psi = state.samples.copy()
    n = psi.size
    dx = state.spacing
    x = state.x
    if bandwidth_tol is not None:
        _check_bandwidth(psi, bandwidth_tol)
    k = _wavenumbers(n, dx)
    half_v = np.exp(-0.5j * dt * V(x))
    kinetic = np.exp(-0.5j * dt * k**2)

    record = None
    if probes is not None:
        probes = np.atleast_1d(np.asarray(probes, dtype=float))
        if np.any(V.support_mask(probes)) and V.support_radius > 0:
            raise InvalidParameterError("flux probes must lie outside the potential support")
        # trigonometric interpolation of psi and psi' at the probes from the spectrum
        phase = np.exp(1j * np.outer(probes - state.origin, k)) / n
        cut = np.searchsorted(x, probes)
        rows_t = np.empty(n_steps + 1)
        rows_j = np.empty((n_steps + 1, probes.size))
        rows_c = np.empty((n_steps + 1, probes.size))

        def sample(i, spec_now, psi_now, t_now):
            val = phase @ spec_now
            der = phase @ (1j * k * spec_now)
            rows_t[i] = t_now
            rows_j[i] = np.imag(np.conj(val) * der)
            dens = np.abs(psi_now) ** 2
            csum = np.concatenate([[0.0], np.cumsum(dens) * dx])
            # cells are centred on grid points; add the partial cell up to each probe
            rows_c[i] = csum[cut] + (probes - x[cut - 1] - 0.5 * dx) * np.abs(val) ** 2

        sample(0, np.fft.fft(psi), psi, state.time)

    peak = np.abs(psi).max()
    for step in range(1, n_steps + 1):
        psi *= half_v
        spec = np.fft.fft(psi) * kinetic
        psi = np.fft.ifft(spec)
        psi *= half_v
        if probes is not None:
            sample(step, spec, psi, state.time + step * dt)
        if step % check_every == 0 or step == n_steps:
            edge = max(np.abs(psi[:8]).max(), np.abs(psi[-8:]).max())
            if edge > boundary_tol * peak:
                raise DomainOverflowError(
                    f"boundary amplitude {edge / peak:.2e} of peak at t={state.time + step * dt:.3f}")
    out = GridState(psi, state.origin, dx, state.time + n_steps * dt)
    if probes is not None:
        record = FluxRecord(rows_t, probes, rows_j, rows_c)
        return out, record
    return out


class GridMomentumAmplitude:
    """Momentum amplitude sampled on the FFT grid of a 1D grid state.

    Values between grid wave numbers come from the exact discrete-time
    Fourier sum; ``half_line`` uses the grid sum directly.
    """

    num_particles = 1
    dimension = 1

    def __init__(self, k, values, x, dx, t_ref=None):
        order = np.argsort(k)
        self.k = k[order]
        self.values = values[order]
        self.coeffs = np.ones(1, dtype=complex)
        self.t_ref = t_ref
        self._x = x
        self._dx = dx
        self._psi0 = None

    @classmethod
    def from_grid(cls, samples, origin, dx, free_time=0.0, t_ref=None):
        n = samples.size
        k = _wavenumbers(n, dx)
        vals = dx / np.sqrt(2 * np.pi) * np.exp(-1j * k * origin) * np.fft.fft(samples)
        vals = vals * np.exp(0.5j * k**2 * free_time)
        amp = cls(k, vals, origin + dx * np.arange(n), dx, t_ref)
        # position-space samples of the rewound state for off-grid evaluation
        amp._psi0 = np.fft.ifft(np.fft.fft(samples) * np.exp(0.5j * k**2 * free_time))
        return amp

    @property
    def dk(self):
        return self.k[1] - self.k[0]

    def norm_squared(self):
        return float(np.sum(np.abs(self.values) ** 2) * self.dk)

    def half_line(self, sign):
        """``integral over sign*k > 0`` of ``|phi_hat|^2``; the k = 0 sample is split."""
        dens = np.abs(self.values) ** 2 * self.dk
        zero = dens[self.k == 0].sum()
        side = dens[self.k > 0].sum() if sign > 0 else dens[self.k < 0].sum()
        return float(side + 0.5 * zero)

    def particle_factors(self, particle, k):
        k = np.asarray(k, dtype=float).reshape(-1)
        phase = np.exp(-1j * np.outer(k, self._x))
        return (self._dx / np.sqrt(2 * np.pi) * phase @ self._psi0)[:, None]

    def __call__(self, k):
        return self.particle_factors(0, k)[:, 0]

    def radial_bound(self, particle=None, nsig=None):
        dens = np.abs(self.values) ** 2
        big = self.k[dens > 1e-16 * dens.max()]
        return float(np.abs(big).max())

    def momentum_width(self, particle=None):
        dens = np.abs(self.values) ** 2
        dens = dens / dens.sum()
        mean = np.sum(self.k * dens)
        return float(np.sqrt(np.sum((self.k - mean) ** 2 * dens)))


def evolve_scattering(state, V, t_total, dt, dt_far=None, probes=None, margin=5.0,
                      overlap_floor=1e-12, block=50, **kw):
    """Split-step evolution that uses ``dt`` while the wave touches the potential.

    Away from the potential the splitting is exact up to the overlap, so
    blocks where the probability within ``support_radius + margin`` is below
    ``overlap_floor`` are taken with the coarser ``dt_far``.  Returns
    ``(GridState, FluxRecord or None)``.
    """
    dt_far = dt if dt_far is None else dt_far
    t_end = state.time + float(t_total)
    near = np.abs(state.x - V.center) <= V.support_radius + margin
    cur, records, first = state, [], True
    while cur.time < t_end - 1e-12:
        dens = np.abs(cur.samples[near]) ** 2
        far = V.support_radius == 0 or dens.sum() * cur.spacing < overlap_floor
        step = dt_far if far else dt
        nsteps = int(min(block, max(1, round((t_end - cur.time) / step))))
        step = min(step, (t_end - cur.time) / nsteps)
        res = split_step_evolve(cur, V, step, nsteps, probes=probes,
                                bandwidth_tol=kw.pop("bandwidth_tol", 1e-8) if first else None, **kw)
        first = False
        if probes is None:
            cur = res
        else:
            cur, rec = res
            records.append(rec if not records else
                           FluxRecord(rec.times[1:], rec.positions, rec.flux[1:], rec.cdf[1:]))
    if probes is None:
        return cur, None
    return cur, FluxRecord(np.concatenate([r.times for r in records]), records[0].positions,
                           np.concatenate([r.flux for r in records]),
                           np.concatenate([r.cdf for r in records]))


def extract_outgoing(state, V, t_ref=None, overlap_tol=1e-6):
    """Outgoing free asymptote ``exp(+i H0 t_ref) exp(-i H t_ref) phi`` in momentum space.

    ``state`` is the interacting evolution at ``t_ref``, taken from
    ``state.time`` when not given.
    """
    if t_ref is not None and not np.isclose(t_ref, state.time):
        raise InvalidParameterError("t_ref does not match the grid state's clock")
    dens = np.abs(state.samples) ** 2
    inside = V.support_mask(state.x)
    overlap = float(dens[inside].sum() * state.spacing) if V.support_radius > 0 else 0.0
    if overlap >= overlap_tol:
        raise NotAsymptoticError(
            f"probability {overlap:.2e} still inside the potential support at t={state.time}")
    return GridMomentumAmplitude.from_grid(state.samples, state.origin, state.spacing,
                                           free_time=state.time, t_ref=state.time)


def analytic_grid_amplitude(state, k):
    """Momentum amplitude of a 1D analytic state at wave numbers ``k``."""
    if not isinstance(state, AnalyticState):
        raise InvalidParameterError("expected an analytic state")
    return momentum_amplitude(state)(np.asarray(k).reshape(-1, 1, 1))


def averaged_barrier_coefficients(state, V, n_sigma=12.0, n_points=20001):
    """``(T, R)`` of a square barrier averaged over ``|phi_hat(k)|^2`` of a 1D analytic state.

    The packet is assumed to start left of the barrier, so only ``k > 0``
    components can be transmitted.
    """
    if V.kind not in ("square", "zero"):
        raise InvalidParameterError("closed-form coefficients exist for square barriers only")
    amp = momentum_amplitude(state)
    kc = float(state.momenta[0, 0, 0])
    sk = amp.momentum_width()
    k = np.linspace(kc - n_sigma * sk, kc + n_sigma * sk, n_points)
    dens = np.abs(amp(k.reshape(-1, 1, 1))) ** 2
    T = square_barrier_transmission(k, V.height, V.width) if V.kind == "square" else np.ones_like(k)
    fwd = np.where(k > 0, T, 0.0)
    total = np.trapezoid(dens, k)
    trans = np.trapezoid(dens * fwd, k) / total
    return float(trans), float(1 - trans)
