"""Flux-across-surfaces and momentum-cone integrals.

Everything is assembled term by term: for ``phi_hat = sum_m c_m prod_p f_mp``
the squared modulus is ``sum_ij c_i conj(c_j) prod_p f_ip conj(f_jp)``, so an
integral over a product of cones is a sum of products of one-particle
matrices ``I_p[i, j] = int_{cone} f_ip conj(f_jp) dk``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, ArityError, DomainError, HorizonTooShortError, InvalidParameterError
from .quadrature import gauss_legendre, panels_for
from .sphere import Patch, SpherePartition

CHUNK = 200_000


# -- momentum cones ----------------------------------------------------------


def _radial_rule(amp, particle, lo=0.0, hi=None, panel_frac=0.5, nodes=8):
    hi = amp.radial_bound(particle) if hi is None else hi
    if hi <= lo:
        return np.zeros(0), np.zeros(0)
    width = panel_frac * amp.momentum_width(particle)
    return gauss_legendre(lo, hi, nodes, panels_for(hi - lo, width))


def _angular_rule(patch, refine=1.0):
    return patch.quadrature(max_dtheta=0.15 / refine, max_dphi=np.pi / 8 / refine)


def _pair_matrix(amp, particle, ks, ws):
    """``sum_n w_n f_i(k_n) conj(f_j(k_n))`` accumulated in chunks."""
    M = amp.coeffs.size
    out = np.zeros((M, M), dtype=complex)
    for a in range(0, ks.shape[0], CHUNK):
        L = amp.particle_log_factors(particle, ks[a:a + CHUNK])  # (n, M)
        shift = L.real.max()
        f = np.exp(L - shift)
        out += np.exp(2 * shift) * np.einsum("n,ni,nj->ij", ws[a:a + CHUNK], f, f.conj())
    return out


def cone_matrix(amp, particle, patch, refine=1.0, k_range=None):
    """Term-pair matrix of one particle's cone (or half-line) integral."""
    lo, hi = (0.0, None) if k_range is None else k_range
    kr, wr = _radial_rule(amp, particle, lo, hi, panel_frac=0.5 / refine)
    if amp.dimension == 1:
        if patch.sign == 0:
            raise DomainError("one-dimensional amplitudes need a line partition")
        return _pair_matrix(amp, particle, (patch.sign * kr)[:, None], wr)
    dirs, wd = _angular_rule(patch, refine)
    ks = (kr[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    ws = (wr[:, None] * kr[:, None] ** 2 * wd[None, :]).reshape(-1)
    return _pair_matrix(amp, particle, ks, ws)


def _combine(coeffs, mats):
    """``Re sum_ij c_i conj(c_j) prod_p mats[p][i, j]``."""
    prod = np.ones_like(mats[0])
    for m in mats:
        prod = prod * m
    return float(np.real(np.einsum("i,j,ij->", coeffs, coeffs.conj(), prod)))


def _is_grid(amp):
    return hasattr(amp, "half_line")


def cone_momentum_integral(amp, patches, tol=None):
    """``int |phi_hat|^2`` over the cone ``{k : k/|k| in patch}`` (one patch per particle).

    Parameters
    ----------
    amp : MomentumAmplitude or GridMomentumAmplitude
    patches : Patch or sequence of Patch
        One patch per particle; a full-sphere patch can be used to
        marginalise a particle.
    tol : float, optional
        When given, the value is recomputed on a refined rule and an
        :class:`AccuracyError` is raised if the two differ by more.
    """
    if isinstance(patches, Patch):
        patches = (patches,)
    patches = tuple(patches)
    if len(patches) != amp.num_particles:
        raise ArityError("need one patch per particle")
    if _is_grid(amp):
        return amp.half_line(patches[0].sign)
    value = _combine(amp.coeffs, [cone_matrix(amp, p, pt) for p, pt in enumerate(patches)])
    if tol is not None:
        fine = _combine(amp.coeffs, [cone_matrix(amp, p, pt, refine=1.5) for p, pt in enumerate(patches)])
        if abs(fine - value) > tol:
            raise AccuracyError(f"cone integral changed by {abs(fine - value):.2e} under refinement")
        value = fine
    return value


def cone_table(amp, partition, tol=None):
    """Cone integrals for every patch (one particle) or patch pair (two particles).

    Returns an array of shape ``(n,)`` or ``(n, n)``.
    """
    if _is_grid(amp):
        return np.array([amp.half_line(p.sign) for p in partition])

    def build(refine):
        mats = [[cone_matrix(amp, p, pt, refine) for pt in partition] for p in range(amp.num_particles)]
        c = amp.coeffs
        if amp.num_particles == 1:
            return np.array([_combine(c, [m]) for m in mats[0]])
        A = np.array(mats[0])  # (n, M, M)
        B = np.array(mats[1])
        return np.real(np.einsum("i,j,aij,bij->ab", c, c.conj(), A, B))

    value = build(1.0)
    if tol is not None:
        fine = build(1.5)
        gap = np.abs(fine - value).max()
        if gap > tol:
            raise AccuracyError(f"cone table changed by {gap:.2e} under refinement")
        value = fine
    return value


def _sphere_overlap(amp, particle, lo, hi):
    """Closed-form angular integral of ``f_i conj(f_j)`` for isotropic widths.

    Each product is ``exp(-a k^2 + b.k + g)`` and the sphere average of
    ``exp(b.k)`` is the entire function ``sinh(z)/z`` with ``z^2 = |k|^2 b.b``.
    """
    st = amp.state
    widths = st.widths[:, particle]
    if not np.allclose(widths, widths[:, :1]):
        return None
    A, B, C = amp._A[:, particle], amp._B[:, particle], amp._C[:, particle]  # (M, d)
    a_ = 1.0 / (4 * A)  # f = exp(C - 1/2 log 2A + (B - ik)^2/(4A))
    # (B - ik)^2/(4A) = B^2/(4A) - i k.B/(2A) - k^2/(4A)
    lin = -1j * B / (2 * A)  # coefficient of k in the exponent
    const = C - 0.5 * np.log(2 * A) + B**2 / (4 * A)
    alpha = a_[:, None, 0] + a_[None, :, 0].conj()  # (M, M)
    beta = lin[:, None, :] + lin[None, :, :].conj()  # (M, M, d)
    gamma = const.sum(-1)[:, None] + const.sum(-1)[None, :].conj()
    bb = (beta**2).sum(-1)
    k, w = _radial_rule(amp, particle, lo, hi)
    if k.size == 0:
        return np.zeros_like(alpha)
    z = k[:, None, None] * np.sqrt(bb)[None]
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    # log(sinh z / z), stable for large Re z
    sz = np.where(small, 0.0, np.log((1 - np.exp(-2 * zs)) / (2 * zs)) + zs)
    expo = -alpha[None] * k[:, None, None] ** 2 + gamma[None] + sz
    return 4 * np.pi * np.einsum("n,nij->ij", w * k**2, np.exp(expo))


def shell_matrix(amp, particle, lo, hi):
    """Term-pair matrix of ``int_{lo <= |k| < hi} f_i conj(f_j) dk``."""
    hi = min(hi, amp.radial_bound(particle))
    if hi <= lo:
        return np.zeros((amp.coeffs.size,) * 2, dtype=complex)
    if amp.dimension == 1:
        return (cone_matrix(amp, particle, Patch(0, sign=1), k_range=(lo, hi))
                + cone_matrix(amp, particle, Patch(1, sign=-1), k_range=(lo, hi)))
    closed = _sphere_overlap(amp, particle, lo, hi)
    if closed is not None:
        return closed
    return cone_matrix(amp, particle, Patch(0), k_range=(lo, hi))


def shell_probability(amp, particle, lo, hi):
    """Probability that particle ``particle`` has ``lo <= |k| < hi`` (others marginalised)."""
    mats = []
    for p in range(amp.num_particles):
        if p == particle:
            mats.append(shell_matrix(amp, p, lo, hi))
        else:
            mats.append(shell_matrix(amp, p, 0.0, np.inf))
    return _combine(amp.coeffs, mats)


# -- spacetime flux -------------------------------------------------------------


@dataclass
class FluxResult:
    """Signed and absolute flux through each patch (optionally per time bin)."""

    signed: np.ndarray
    absolute: np.ndarray
    tail: float
    t_max: float
    time_edges: np.ndarray | None = None

    @property
    def total_signed(self):
        return float(self.signed.sum())

    @property
    def total_absolute(self):
        return float(self.absolute.sum())


def default_horizon(state, R):
    """``t_max = 10 R / |k0|_min`` over all terms and particles.

    Terms at rest use their momentum spread in place of ``|k0|``.
    """
    k = np.linalg.norm(state.momenta, axis=-1)
    sk = 0.5 / state.widths.min(axis=-1)
    kmin = np.maximum(k, 2 * sk).min()
    return 10.0 * R / kmin


def _u_rule(amp, R, t_lo, t_hi, per_panel=8, panel_frac=0.25):
    """Nodes in ``u = R / t`` for ``t`` in ``[t_lo, t_hi]`` with Jacobian ``R / u^2``."""
    u_hi = amp.radial_bound(0) if t_lo <= 0 else min(R / t_lo, amp.radial_bound(0))
    u_lo = R / t_hi
    if u_hi <= u_lo:
        return np.zeros(0), np.zeros(0)
    u, w = gauss_legendre(u_lo, u_hi, per_panel, panels_for(u_hi - u_lo, panel_frac * amp.momentum_width(0)))
    return R / u, w * R / u**2


def _flux_on(state, partition, t_nodes, t_w, refine=1.0):
    """Signed and absolute ``int dt int_{R patch} j.dS`` for each patch."""
    R = partition.radius
    out_s = np.zeros(len(partition))
    out_a = np.zeros(len(partition))
    if t_nodes.size == 0:
        return out_s, out_a
    for p in partition:
        if partition.dimension == 1:
            dirs, wd = np.array([[float(p.sign)]]), np.ones(1)
        else:
            dirs, wd = _angular_rule(p, refine)
        pts = R * dirs
        area = wd * R ** (state.dimension - 1)
        step = max(1, CHUNK // dirs.shape[0])
        for a in range(0, t_nodes.size, step):
            tt, ww = t_nodes[a:a + step], t_w[a:a + step]
            q = np.broadcast_to(pts[None], (tt.size,) + pts.shape).reshape(-1, 1, state.dimension)
            j = state.current(q, np.repeat(tt, dirs.shape[0]))[:, 0, :]
            jn = (j.reshape(tt.size, dirs.shape[0], -1) * dirs[None]).sum(-1)
            out_s[p.id] += np.einsum("t,d,td->", ww, area, jn)
            out_a[p.id] += np.einsum("t,d,td->", ww, area, np.abs(jn))
    return out_s, out_a


def flux_integral(state, partition, T=0.0, t_max=None, tol=1e-4, time_edges=None, check_tail=True):
    """Time-integrated flux of a one-particle state through each patch of ``R * partition``.

    The time integral is taken in ``u = R / t`` (Gauss-Legendre panels a
    quarter of the momentum width wide), which concentrates nodes where the
    packet actually crosses; the surface integral uses the patch
    quadrature.  The flux between ``t_max`` and ``1.2 t_max`` is the tail
    estimate and must stay below ``tol``.

    Returns
    -------
    FluxResult
        ``signed``/``absolute`` have shape ``(n_patches,)`` or
        ``(n_patches, n_bins)`` when ``time_edges`` is given.
    """
    if state.num_particles != 1:
        raise ArityError("flux integrals are defined here for one particle")
    from .states import momentum_amplitude

    amp = momentum_amplitude(state)
    R = partition.radius
    t_max = default_horizon(state, R) if t_max is None else float(t_max)
    if t_max <= T:
        raise InvalidParameterError("t_max must exceed T")
    tail = 0.0
    if check_tail:
        tn, tw = _u_rule(amp, R, t_max, 1.2 * t_max)
        tail = float(_flux_on(state, partition, tn, tw)[1].sum())
        if tail > tol:
            raise HorizonTooShortError(f"flux {tail:.2e} between t_max and 1.2 t_max exceeds {tol:.1e}")
    if time_edges is None:
        tn, tw = _u_rule(amp, R, T, t_max)
        s, a = _flux_on(state, partition, tn, tw)
        return FluxResult(s, a, tail, t_max)
    edges = np.asarray(time_edges, dtype=float)
    S = np.zeros((len(partition), edges.size - 1))
    A = np.zeros_like(S)
    for b, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        tn, tw = _u_rule(amp, R, max(lo, T), min(hi, t_max))
        S[:, b], A[:, b] = _flux_on(state, partition, tn, tw)
    return FluxResult(S, A, tail, t_max, edges)


# -- two-time flux and straight paths -------------------------------------------


def multitime_flux_form(wave, x, t, y, s, dS_x, dS_y):
    """``|phi(x,t,y,s)|^2 (v^x . dS_x)(v^y . dS_y)``; zero at nodes."""
    from .propagate import TwoTimeWave

    if not isinstance(wave, TwoTimeWave):
        wave = TwoTimeWave(wave)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[0]
    tt = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    ss = np.broadcast_to(np.asarray(s, dtype=float), (n,))
    rho = wave.density(x, y, tt, ss)
    vx, vy, node = wave.velocity(x, y, tt, ss)
    val = rho * (vx * np.atleast_2d(dS_x)).sum(-1) * (vy * np.atleast_2d(dS_y)).sum(-1)
    return np.where(node, 0.0, val)


def straight_path_flux(amp, x, t, y, s, dS_x, dS_y):
    """``|phi_hat(x/t, y/s)|^2 t^-3 s^-3 (x/t . dS_x)(y/s . dS_y)``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 1) or np.any(s < 1):
        raise DomainError("straight-path flux needs t, s >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    tt = np.broadcast_to(t, (x.shape[0],))[:, None]
    ss = np.broadcast_to(s, (y.shape[0],))[:, None]
    kx, ky = x / tt, y / ss
    dens = amp.density(np.stack([kx, ky], axis=1))
    d = amp.dimension
    return (dens * tt[:, 0] ** -d * ss[:, 0] ** -d
            * (kx * np.atleast_2d(dS_x)).sum(-1) * (ky * np.atleast_2d(dS_y)).sum(-1))


def _log_time_rule(amp, particle, R, T, panel=0.02, nodes=8):
    k_hi = amp.radial_bound(particle)  # largest |k0| + 12 sigma_k
    k_lo = max(1e-3 * k_hi, k_hi - 24.0 * amp.momentum_width(particle))
    t_lo = max(T, R / k_hi)
    t_hi = max(R / k_lo, t_lo)
    if t_hi <= t_lo:
        return np.zeros(0), np.zeros(0)
    v, w = gauss_legendre(np.log(t_lo), np.log(t_hi), nodes, panels_for(np.log(t_hi / t_lo), panel))
    return np.exp(v), w * np.exp(v)


def _straight_matrix(amp, particle, patch, R, T):
    """``int dt int_{R patch} t^-d (x/t . n) f_i(x/t) conj f_j(x/t) dS`` per term pair."""
    tn, tw = _log_time_rule(amp, particle, R, T)
    d = amp.dimension
    if d == 1:
        dirs, wd = np.array([[float(patch.sign)]]), np.ones(1)
    else:
        dirs, wd = _angular_rule(patch)
    area = wd * R ** (d - 1)
    k = (R * dirs[None, :, :] / tn[:, None, None]).reshape(-1, d)
    radial = np.repeat(R / tn, dirs.shape[0])  # x/t . n on the sphere
    w = (tw[:, None] * tn[:, None] ** (-d) * area[None, :]).reshape(-1) * radial
    return _pair_matrix(amp, particle, k, w)


def straight_path_exit_integral(amp, patches, R, T=1.0):
    """Time-and-surface integral of the straight-path flux over ``R * patches``.

    ``patches`` holds one patch per particle; time runs from ``T`` on a
    logarithmic Gauss-Legendre mesh.  Agreement with the cone integral is
    the change of variables ``k = x / t``.
    """
    if isinstance(patches, Patch):
        patches = (patches,)
    if len(patches) != amp.num_particles:
        raise ArityError("need one patch per particle")
    if T < 1:
        raise DomainError("straight-path integrals start at T >= 1")
    return _combine(amp.coeffs, [_straight_matrix(amp, p, pt, R, T) for p, pt in enumerate(patches)])
