"""Wave-function representations.

Units are fixed by hbar/m = 1, so the free Hamiltonian is ``-Laplacian/2``.

An :class:`AnalyticState` is a finite superposition of products of Gaussian
packets, one packet per particle.  Each packet factor along one axis is kept
as a complex quadratic exponent

    g(x) = exp(-A x**2 + B x + C)

whose coefficients depend on the elapsed free-evolution time of that particle.
Values, log-gradients, Laplacians, Fourier transforms and all overlap
integrals follow from (A, B, C) in closed form, and free evolution only
changes the per-particle clocks.

Fourier convention (symmetric):

    phi_hat(k) = (2 pi)^(-d/2) * integral exp(-i k.x) phi(x) dx

so that free evolution multiplies ``phi_hat`` by ``exp(-i |k|^2 t / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ArityError, DomainOverflowError, InvalidParameterError, SamplingDegenerateError
from .quadrature import gauss_legendre
from .rng import chunk_bounds, stream

NODE_THRESHOLD = 1e-14
SAMPLE_CHUNK = 4096
MIN_ACCEPTANCE = 1e-3


@dataclass(frozen=True)
class GaussianPacketSpec:
    """Gaussian packet centred at ``center`` with mean wave vector ``momentum``.

    ``width`` is the position standard deviation of ``|psi|^2`` per axis and
    may be a scalar.  The packet is normalised to unit squared norm.
    """

    center: tuple
    momentum: tuple
    width: tuple | float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        momentum = tuple(float(k) for k in np.atleast_1d(self.momentum))
        d = len(center)
        if d not in (1, 2, 3):
            raise InvalidParameterError(f"center must have 1-3 components, got {d}")
        if len(momentum) != d:
            raise InvalidParameterError("momentum and center must have the same dimension")
        width = np.atleast_1d(np.asarray(self.width, dtype=float))
        if width.size == 1:
            width = np.full(d, width[0])
        if width.size != d:
            raise InvalidParameterError("width must be a scalar or one value per axis")
        if not np.all(np.isfinite(width)) or np.any(width <= 0):
            raise InvalidParameterError(f"width must be strictly positive, got {width.tolist()}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "momentum", momentum)
        object.__setattr__(self, "width", tuple(width.tolist()))
        object.__setattr__(self, "phase", float(self.phase))

    @property
    def dimension(self):
        return len(self.center)

    @property
    def momentum_width(self):
        """Standard deviation of ``|phi_hat|^2`` per axis, ``1/(2 sigma)``."""
        return tuple(0.5 / s for s in self.width)


def _quadratic(center, momentum, width, tau):
    """Exponent coefficients (A, B, C) of free-evolved 1D packet factors.

    All arguments broadcast; ``tau`` is the elapsed free time.
    """
    s2 = width**2
    denom = 4.0 * s2 + 2j * tau
    A = 1.0 / denom
    mean = center + momentum * tau
    B = 2.0 * A * mean + 1j * momentum
    C = (
        -A * mean**2
        - 1j * momentum * (center + 0.5 * momentum * tau)
        - 0.25 * np.log(2.0 * np.pi * s2)
        - 0.5 * np.log(1.0 + 1j * tau / (2.0 * s2))
    )
    return A, B, C


def _full_line_overlap(S, Bs, Cs):
    """``integral exp(-S x^2 + Bs x + Cs) dx`` over the real line, Re S > 0."""
    return np.sqrt(np.pi / S) * np.exp(Bs**2 / (4.0 * S) + Cs)


def _interval_overlap(S, Bs, Cs, lo, hi, nodes=48):
    """Same integral restricted to ``[lo, hi]``; arrays broadcast.

    Real exponents (a packet with itself) use the normal CDF; complex ones use
    Gauss-Legendre on the window where the integrand modulus is not negligible.
    """
    S, Bs, Cs, lo, hi = np.broadcast_arrays(*(np.asarray(a) for a in (S, Bs, Cs, lo, hi)))
    out = np.zeros(S.shape, dtype=complex)
    full = np.isneginf(lo) & np.isposinf(hi)
    if full.any():
        out[full] = _full_line_overlap(S[full], Bs[full], Cs[full])
    rest = ~full
    if not rest.any():
        return out
    Sr, Br, Cr, lr, hr = S[rest], Bs[rest], Cs[rest], lo[rest], hi[rest]
    res = np.zeros(Sr.shape, dtype=complex)
    real = (np.abs(Sr.imag) <= 1e-14 * np.abs(Sr.real)) & (np.abs(Br.imag) <= 1e-14 * (1 + np.abs(Br.real)))
    if real.any():
        a = Sr[real].real
        mu = Br[real].real / (2 * a)
        sd = 1.0 / np.sqrt(2 * a)
        total = _full_line_overlap(Sr[real], Br[real], Cr[real])
        res[real] = total * (ndtr((hr[real] - mu) / sd) - ndtr((lr[real] - mu) / sd))
    cplx = ~real
    if cplx.any():
        a = Sr[cplx].real
        centre = Br[cplx].real / (2 * a)
        spread = 1.0 / np.sqrt(2 * a)
        wlo = np.maximum(lr[cplx], centre - 12 * spread)
        whi = np.minimum(hr[cplx], centre + 12 * spread)
        ok = whi > wlo
        # oscillation across the window decides the node count
        freq = np.abs((Br[cplx] - 2 * Sr[cplx] * centre).imag) + 24 * np.abs(Sr[cplx].imag) * spread
        n_osc = int(np.max(np.where(ok, freq * (whi - wlo), 0.0), initial=0.0) / np.pi)
        panels = max(4, min(n_osc // 4 + 4, 2000))
        xg, wg = gauss_legendre(-1.0, 1.0, nodes // 4 if nodes >= 8 else 2, panels)
        half = 0.5 * np.where(ok, whi - wlo, 0.0)
        mid = 0.5 * (whi + wlo)
        x = mid[:, None] + half[:, None] * xg[None, :]
        vals = np.exp(-Sr[cplx][:, None] * x**2 + Br[cplx][:, None] * x + Cr[cplx][:, None])
        res[cplx] = half * (vals @ wg)
    out[rest] = res
    return out


class AnalyticState:
    """Normalised superposition ``sum_m c_m prod_p psi_{m,p}(x_p)`` of Gaussian products.

    Parameters
    ----------
    terms : sequence of ``(coefficient, packets)``
        ``packets`` holds one :class:`GaussianPacketSpec` per particle.
    times : sequence of float, optional
        Free-evolution time already applied to each particle.
    normalize : bool
        Rescale coefficients to unit squared norm.
    """

    def __init__(self, terms, times=None, normalize=True):
        merged = []
        for coeff, packets in terms:
            packets = tuple(packets)
            for i, (c2, p2) in enumerate(merged):
                if p2 == packets:
                    merged[i] = (c2 + complex(coeff), p2)
                    break
            else:
                merged.append((complex(coeff), packets))
        merged = [(c, p) for c, p in merged if c != 0]
        if not merged:
            raise InvalidParameterError("state has no nonzero coefficient")
        P = len(merged[0][1])
        if P not in (1, 2):
            raise ArityError(f"states hold 1 or 2 particles, got {P}")
        d = merged[0][1][0].dimension
        for _, packets in merged:
            if len(packets) != P or any(pk.dimension != d for pk in packets):
                raise InvalidParameterError("all terms need the same particle count and dimension")
        self.num_particles = P
        self.dimension = d
        self._terms = tuple(merged)
        self.centers = np.array([[pk.center for pk in pks] for _, pks in merged])
        self.momenta = np.array([[pk.momentum for pk in pks] for _, pks in merged])
        self.widths = np.array([[pk.width for pk in pks] for _, pks in merged])
        phases = np.array([sum(pk.phase for pk in pks) for _, pks in merged])
        coeffs = np.array([c for c, _ in merged]) * np.exp(1j * phases)
        self.times = np.zeros(P) if times is None else np.asarray(times, dtype=float).reshape(P)
        for arr in (self.centers, self.momenta, self.widths, self.times):
            arr.setflags(write=False)
        self.normalization_constant = 1.0
        if normalize:
            nrm = np.sqrt(self._norm_squared(coeffs))
            if not np.isfinite(nrm) or nrm <= 0:
                raise InvalidParameterError("superposition has zero norm")
            coeffs = coeffs / nrm
            self.normalization_constant = 1.0 / nrm
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)

    # -- structure -------------------------------------------------------

    @property
    def terms(self):
        return self._terms

    @property
    def num_terms(self):
        return len(self.coeffs)

    def with_times(self, times):
        """Same state with the per-particle clocks replaced (coefficients kept)."""
        new = object.__new__(AnalyticState)
        new.__dict__.update(self.__dict__)
        new.times = np.asarray(times, dtype=float).reshape(self.num_particles)
        new.times.setflags(write=False)
        return new

    def __repr__(self):
        return (f"AnalyticState(particles={self.num_particles}, dim={self.dimension}, "
                f"terms={self.num_terms}, times={self.times.tolist()})")

    def _gram(self):
        A, B, C = _quadratic(self.centers, self.momenta, self.widths, 0.0)  # (M,P,d)
        S = A[:, None] + A[None, :].conj()
        Bs = B[:, None] + B[None, :].conj()
        Cs = C[:, None] + C[None, :].conj()
        return np.prod(_full_line_overlap(S, Bs, Cs), axis=(2, 3))  # G[i,j] = <psi_j|psi_i>

    def _norm_squared(self, coeffs):
        G = self._gram()
        return float(np.real(np.einsum("i,j,ij->", coeffs, coeffs.conj(), G)))

    def norm_squared(self):
        """Closed-form squared norm (time-independent under free evolution)."""
        return self._norm_squared(self.coeffs)

    # -- evaluation ------------------------------------------------------

    def _clock(self, t, npts):
        """Per-point per-particle elapsed times, shape ``(npts or 1, P)``.

        Scalars apply to everything, 1D arrays are per point (per particle
        when ``npts == 0``), 2D arrays are ``(npts or 1, P)``.
        """
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            tau = np.broadcast_to(t, (1, self.num_particles))
        elif t.ndim == 1 and npts == 0:
            tau = t.reshape(1, self.num_particles)
        elif t.ndim == 1:
            tau = np.repeat(t[:, None], self.num_particles, axis=1)
        else:
            tau = t
        return tau + self.times[None, :]

    def _coerce(self, q):
        q = np.asarray(q, dtype=float)
        P, d = self.num_particles, self.dimension
        if q.ndim == 1:
            q = q.reshape(1, P, d)
        elif q.ndim == 2:
            q = q.reshape(q.shape[0], P, d)
        return q

    def quadratic(self, t, npts=1):
        """(A, B, C) with shape ``(npts or 1, M, P, d)`` at elapsed times ``t``."""
        tau = self._clock(t, npts)[:, None, :, None]
        return _quadratic(self.centers[None], self.momenta[None], self.widths[None], tau)

    def log_terms(self, q, t=0.0):
        """Log of every term and its log-gradient.

        Returns
        -------
        L : (n, M) complex
        G : (n, M, P, d) complex, gradient of each term's log
        A : (n or 1, M, P, d) complex
        """
        q = self._coerce(q)
        A, B, C = self.quadratic(t, q.shape[0])
        x = q[:, None, :, :]
        expo = -A * x**2 + B * x + C
        L = np.log(self.coeffs)[None, :] + expo.sum(axis=(2, 3))
        G = -2.0 * A * x + B
        return L, G, A

    def _weights(self, L):
        m = L.real.max(axis=1, keepdims=True)
        return np.exp(L - m), m[:, 0]

    def __call__(self, q, t=0.0):
        """Wave-function value at configurations ``q`` (shape ``(n, P, d)``)."""
        L, _, _ = self.log_terms(q, t)
        return np.exp(L).sum(axis=1)

    def density(self, q, t=0.0):
        L, _, _ = self.log_terms(q, t)
        w, m = self._weights(L)
        return np.abs(w.sum(axis=1)) ** 2 * np.exp(2 * m)

    def derivatives(self, q, t=0.0):
        """Scaled value, log-gradient and per-particle Laplacian ratio.

        Returns ``(scale, ratio_grad, ratio_lap, node)`` with
        ``phi = scale``, ``grad phi / phi = ratio_grad`` (n, P, d) and
        ``Lap_p phi / phi = ratio_lap`` (n, P).  ``scale`` is the plain value
        and may underflow far from the packets; the ratios do not.
        """
        L, G, A = self.log_terms(q, t)
        w, m = self._weights(L)
        S = w.sum(axis=1)
        mag = np.abs(w).sum(axis=1)
        node = np.abs(S) < NODE_THRESHOLD * mag
        safe = np.where(node, 1.0, S)
        grad = np.einsum("nm,nmpd->npd", w, G) / safe[:, None, None]
        lap_terms = (G**2 - 2.0 * A).sum(axis=3)
        lap = np.einsum("nm,nmp->np", w, lap_terms) / safe[:, None]
        scale = S * np.exp(m)
        return scale, grad, lap, node

    def velocity(self, q, t=0.0):
        """Bohmian velocity ``Im(grad phi / phi)``; zero on nodes.

        Returns ``(v, node)`` with ``v`` shaped ``(n, P, d)``.
        """
        _, grad, _, node = self.derivatives(q, t)
        v = grad.imag
        v[node] = 0.0
        return v, node

    def current(self, q, t=0.0):
        """Probability current ``Im(phi* grad phi)`` per particle, ``(n, P, d)``."""
        scale, grad, _, node = self.derivatives(q, t)
        j = (np.abs(scale) ** 2)[:, None, None] * grad.imag
        j[node] = 0.0
        return j

    # -- probabilities ---------------------------------------------------

    def box_probability(self, lower, upper, t=0.0):
        """Probability of the axis-aligned box ``lower <= q <= upper``.

        ``lower`` and ``upper`` have shape ``(..., P, d)`` and may contain
        infinities.  Evaluated in closed form from Gaussian overlap integrals;
        ``t`` is a scalar or a per-particle tuple.
        """
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        tau = self._clock(t, 0)[0]
        A, B, C = _quadratic(self.centers, self.momenta, self.widths, tau[None, :, None])
        S = A[:, None] + A[None, :].conj()  # (M,M,P,d)
        Bs = B[:, None] + B[None, :].conj()
        Cs = C[:, None] + C[None, :].conj()
        shape = np.broadcast_shapes(lower.shape, upper.shape)
        lo = np.broadcast_to(lower, shape)[..., None, None, :, :]
        hi = np.broadcast_to(upper, shape)[..., None, None, :, :]
        I = _interval_overlap(S, Bs, Cs, lo, hi)
        cc = self.coeffs[:, None] * self.coeffs[None, :].conj()
        return np.real(np.einsum("ij,...ij->...", cc, np.prod(I, axis=(-2, -1))))

    def marginal_cdf(self, particle, axis, x, t=0.0):
        """CDF of one Cartesian coordinate of one particle at points ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        P, d = self.num_particles, self.dimension
        lo = np.full(x.shape + (P, d), -np.inf)
        hi = np.full(x.shape + (P, d), np.inf)
        hi[..., particle, axis] = x
        return self.box_probability(lo, hi, t)

    def component_moments(self, t=0.0):
        """Means and standard deviations of each term's own density, ``(M, P, d)``."""
        tau = self._clock(t, 0)[0][None, :, None]
        mean = self.centers + self.momenta * tau
        std = self.widths * np.sqrt(1.0 + tau**2 / (4.0 * self.widths**4))
        return mean, std


def make_gaussian(spec):
    """One-particle state made of the single packet ``spec``."""
    if not isinstance(spec, GaussianPacketSpec):
        spec = GaussianPacketSpec(**spec)
    return AnalyticState([(1.0, (spec,))])


def make_entangled_pair(spec_a, spec_b, coeffs=(1.0, 1.0)):
    """Two-particle state ``c1 psiA(x) psiB(y) + c2 psiB(x) psiA(y)``, normalised."""
    c1, c2 = (complex(c) for c in coeffs)
    if c1 == 0 and c2 == 0:
        raise InvalidParameterError("at least one coefficient must be nonzero")
    if spec_a.dimension != spec_b.dimension:
        raise InvalidParameterError("packets must share a dimension")
    return AnalyticState([(c1, (spec_a, spec_b)), (c2, (spec_b, spec_a))])


class MomentumAmplitude:
    """Closed-form momentum amplitude of an :class:`AnalyticState`.

    ``__call__`` takes wave vectors shaped ``(n, P, d)``;
    ``particle_factors`` exposes the per-term single-particle factors so that
    products of cone integrals can be assembled term by term.
    """

    def __init__(self, state):
        self.state = state
        self.coeffs = state.coeffs
        self.num_particles = state.num_particles
        self.dimension = state.dimension
        A, B, C = _quadratic(state.centers, state.momenta, state.widths, state.times[None, :, None])
        self._A, self._B, self._C = A, B, C  # (M, P, d)

    def particle_log_factors(self, particle, k):
        """Log of each term's factor for one particle, ``(n, M)``; ``k`` is ``(n, d)``."""
        k = np.asarray(k, dtype=float).reshape(-1, self.dimension)
        A = self._A[None, :, particle, :]
        B = self._B[None, :, particle, :]
        C = self._C[None, :, particle, :]
        kk = k[:, None, :]
        return (C + (B - 1j * kk) ** 2 / (4.0 * A) - 0.5 * np.log(2.0 * A)).sum(axis=2)

    def particle_factors(self, particle, k):
        return np.exp(self.particle_log_factors(particle, k))

    def __call__(self, k):
        k = np.asarray(k, dtype=float).reshape(-1, self.num_particles, self.dimension)
        logs = sum(self.particle_log_factors(p, k[:, p, :]) for p in range(self.num_particles))
        return (self.coeffs[None, :] * np.exp(logs)).sum(axis=1)

    def density(self, k):
        return np.abs(self(k)) ** 2

    def radial_bound(self, particle=None, nsig=12.0):
        """Radius in k-space outside which ``|phi_hat|^2`` is negligible."""
        sl = slice(None) if particle is None else particle
        kc = np.linalg.norm(self.state.momenta[:, sl], axis=-1)
        sk = 0.5 / self.state.widths[:, sl].min(axis=-1)
        return float(np.max(kc + nsig * sk))

    def momentum_width(self, particle=None):
        sl = slice(None) if particle is None else particle
        return float(np.min(0.5 / self.state.widths[:, sl]))


def momentum_amplitude(state):
    """Momentum amplitude of ``state`` at its current clocks."""
    return MomentumAmplitude(state)


def sample_initial_configuration(state, rng_seed, n, t=0.0):
    """Draw ``n`` i.i.d. configurations from ``|phi_t|^2``, shape ``(n, P, d)``.

    Work is split into fixed chunks with one counter-based stream each, so the
    output depends only on ``(rng_seed, n)``.  Proposals come from the mixture
    of term densities weighted by ``|c_m|``; the envelope constant
    ``(sum |c_m|)^2`` follows from Cauchy-Schwarz.
    """
    out = np.empty((n, state.num_particles, state.dimension))
    for i, (a, b) in enumerate(chunk_bounds(n, SAMPLE_CHUNK)):
        out[a:b] = _sample_chunk(state, stream(rng_seed, i), b - a, t)
    return out


def _sample_chunk(state, rng, m, t):
    # one clock per particle, never per point
    t = np.broadcast_to(np.asarray(t, dtype=float), (state.num_particles,)).reshape(1, -1)
    absc = np.abs(state.coeffs)
    total = absc.sum()
    acceptance = 1.0 / (total**2)
    if acceptance < MIN_ACCEPTANCE:
        raise SamplingDegenerateError(
            f"expected rejection acceptance {acceptance:.2e} below {MIN_ACCEPTANCE}")
    mean, std = state.component_moments(t)
    probs = absc / total
    single = state.num_terms == 1
    got = []
    need = m
    drawn = accepted = 0
    while need > 0:
        batch = int(need / acceptance * 1.1) + 16
        comp = rng.choice(state.num_terms, size=batch, p=probs)
        z = rng.standard_normal((batch, state.num_particles, state.dimension))
        q = mean[comp] + std[comp] * z
        if single:
            keep = q
        else:
            L, _, _ = state.log_terms(q, t)
            w, _ = state._weights(L)
            ratio = np.abs(w.sum(axis=1)) ** 2 / (total * (np.abs(w) ** 2 / absc[None, :]).sum(axis=1))
            u = rng.random(batch)
            keep = q[u < ratio]
        drawn += batch
        accepted += len(keep)
        if drawn >= 20000 and accepted / drawn < MIN_ACCEPTANCE:
            raise SamplingDegenerateError(f"rejection acceptance {accepted / drawn:.2e}")
        keep = keep[:need]
        got.append(keep)
        need -= len(keep)
    return np.concatenate(got, axis=0)


@dataclass
class GridState:
    """Complex amplitude on a uniform 1D grid ``x_n = origin + n * spacing``."""

    samples: np.ndarray
    origin: float
    spacing: float
    time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.spacing <= 0:
            raise InvalidParameterError("grid spacing must be positive")

    @property
    def x(self):
        return self.origin + self.spacing * np.arange(self.samples.size)

    def norm_squared(self):
        return float(np.trapezoid(np.abs(self.samples) ** 2, dx=self.spacing))

    def boundary_ratio(self, edge=8):
        peak = np.abs(self.samples).max()
        edges = np.concatenate([self.samples[:edge], self.samples[-edge:]])
        return float(np.abs(edges).max() / peak)

    def copy(self):
        return GridState(self.samples.copy(), self.origin, self.spacing, self.time)

    @classmethod
    def from_analytic(cls, state, origin, spacing, n, boundary_tol=1e-8):
        """Sample a one-particle 1D analytic state on a grid and renormalise."""
        if state.num_particles != 1 or state.dimension != 1:
            raise ArityError("grid states are one particle in one dimension")
        x = origin + spacing * np.arange(n)
        psi = state(x.reshape(-1, 1, 1))
        grid = cls(psi, origin, spacing, 0.0)
        if grid.boundary_ratio() >= boundary_tol:
            raise DomainOverflowError(
                f"boundary amplitude ratio {grid.boundary_ratio():.2e} >= {boundary_tol}")
        grid.samples = psi / np.sqrt(grid.norm_squared())
        return grid
