"""Born-series T matrix, scattering amplitude and cross sections (hbar/m = 1).

Plane waves are ``exp(i k.x)`` without 2 pi factors, so the first Born term
is ``T1(k, k') = V_hat(k - k') / (2 pi)^3`` with
``V_hat(q) = int V(x) exp(-i q.x) dx``; the free resolvent at energy
``k'^2 / 2`` contributes ``2 / (k'^2 - p^2 + i0)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, DomainError, InvalidParameterError
from .quadrature import gauss_legendre, panels_for

TWO_PI3 = (2 * np.pi) ** 3


@dataclass(frozen=True)
class Potential3D:
    """Central short-range potential.

    ``yukawa``: ``V(r) = strength * exp(-mu r) / r``.
    ``gaussian``: ``V(r) = -depth * exp(-r^2 / (2 width^2))``.
    """

    kind: str
    strength: float = 0.0
    mu: float = 1.0
    depth: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind == "yukawa":
            if not self.mu > 0:
                raise InvalidParameterError("Yukawa screening mu must be positive (short range)")
        elif self.kind == "gaussian":
            if not self.width > 0:
                raise InvalidParameterError("Gaussian well width must be positive")
        else:
            raise InvalidParameterError(f"unknown potential kind {self.kind!r}")

    @classmethod
    def yukawa(cls, strength, mu):
        return cls("yukawa", strength=float(strength), mu=float(mu))

    @classmethod
    def gaussian_well(cls, depth, width):
        return cls("gaussian", depth=float(depth), width=float(width))

    @property
    def is_zero(self):
        return (self.strength if self.kind == "yukawa" else self.depth) == 0

    @property
    def decay_scale(self):
        """Momentum scale over which ``V_hat`` varies."""
        return self.mu if self.kind == "yukawa" else 1.0 / self.width

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "yukawa":
            return self.strength * np.exp(-self.mu * r) / r
        return -self.depth * np.exp(-0.5 * (r / self.width) ** 2)

    def fourier(self, q2):
        """``V_hat`` as a function of ``q^2`` (complex arguments allowed)."""
        if self.kind == "yukawa":
            return 4 * np.pi * self.strength / (q2 + self.mu**2)
        a = self.width
        return -self.depth * (2 * np.pi * a * a) ** 1.5 * np.exp(-0.5 * q2 * a * a)


@dataclass(frozen=True)
class TMatrixValue:
    k_out: np.ndarray
    k_in: np.ndarray
    value: complex
    order: int

    @property
    def on_shell(self):
        a, b = np.linalg.norm(self.k_out), np.linalg.norm(self.k_in)
        return bool(np.isclose(a, b, rtol=1e-10, atol=1e-14))


def born_T1(V, k, kp):
    """First Born term for arrays of wave vectors (broadcasting over leading axes)."""
    q = np.asarray(k) - np.asarray(kp)
    return V.fourier((q * q).sum(-1)) / TWO_PI3


def _canonical(k, kp):
    """Rotate so ``k'`` lies on z and ``k`` in the xz half-plane; returns the new vectors."""
    kp_n = np.linalg.norm(kp)
    k_n = np.linalg.norm(k)
    if kp_n == 0 or k_n == 0:
        return np.array([0.0, 0.0, k_n]), np.array([0.0, 0.0, kp_n])
    c = float(np.clip(np.dot(k, kp) / (k_n * kp_n), -1.0, 1.0))
    s = np.sqrt(max(0.0, 1 - c * c))
    return np.array([k_n * s, 0.0, k_n * c]), np.array([0.0, 0.0, kp_n])


def _angular_nodes(n_theta, n_phi):
    c, wc = gauss_legendre(-1.0, 1.0, 8, max(1, n_theta // 8))
    p, wp = gauss_legendre(0.0, 2 * np.pi, 8, max(1, n_phi // 8))
    C, Pp = np.meshgrid(c, p, indexing="ij")
    S = np.sqrt(1 - C**2)
    dirs = np.stack([S * np.cos(Pp), S * np.sin(Pp), C], axis=-1).reshape(-1, 3)
    return dirs, np.outer(wc, wp).reshape(-1)


def _second_order(V, k, kp, n_rad, n_ang):
    """``int d^3p T1(k,p) T1(p,k') 2 / (k'^2 - p^2 + i0)`` on a deformed radial contour."""
    kk, kpp = _canonical(k, kp)
    kap = float(np.linalg.norm(kpp))
    dirs, wd = _angular_nodes(n_ang, n_ang)
    kk2, kp2 = kk @ kk, kpp @ kpp
    ck, ckp = dirs @ kk, dirs @ kpp

    def g(rho):
        # angular integral of T1 T1 at complex radius rho (analytic continuation)
        r = rho[:, None]
        a = V.fourier(kk2 - 2 * r * ck[None] + r * r)
        b = V.fourier(kp2 - 2 * r * ckp[None] + r * r)
        return (a * b * wd[None]).sum(1) / TWO_PI3**2

    scale = V.decay_scale
    if kap > 0:
        h = 0.5 * min(scale, kap)
        tau, wt = gauss_legendre(0.0, 2 * kap, 8, panels_for(2 * kap, min(scale, kap) / 4))
        rho = tau - 1j * h * np.sin(np.pi * tau / (2 * kap))
        drho = 1 - 1j * h * np.pi / (2 * kap) * np.cos(np.pi * tau / (2 * kap))
        inner = np.sum(wt * drho * rho**2 * g(rho) * 2 / (kap**2 - rho**2))
        start = 2 * kap
    else:
        inner, start = 0.0, 0.0
    # tail [start, inf) through tau = start + L (1/u - 1) with u in (0, 1]
    L = max(start, 4.0 * scale)
    u, wu = gauss_legendre(0.0, 1.0, 8, n_rad)
    tau = start + L * (1 / u - 1)
    jac = L / u**2
    outer = np.sum(wu * jac * tau**2 * g(tau.astype(complex)) * 2 / (kap**2 - tau**2))
    return complex(inner + outer)


def born_T(V, k, kp, order=1, tol=1e-8):
    """Born-series T matrix ``T(k, k')`` truncated at ``order`` (1 or 2).

    The second-order term is computed twice with increasing resolution; an
    :class:`AccuracyError` is raised if the estimates differ by more than
    ``tol`` relative to the first-order value.
    """
    if order not in (1, 2):
        raise InvalidParameterError("Born order must be 1 or 2")
    k = np.asarray(k, dtype=float).reshape(3)
    kp = np.asarray(kp, dtype=float).reshape(3)
    t1 = complex(born_T1(V, k, kp))
    if order == 1 or V.is_zero:
        return TMatrixValue(k, kp, t1, order)
    coarse = _second_order(V, k, kp, 24, 48)
    fine = _second_order(V, k, kp, 40, 80)
    ref = max(abs(t1), abs(fine), 1e-300)
    if abs(fine - coarse) > tol * ref:
        raise AccuracyError(f"second Born term unstable: {abs(fine - coarse) / ref:.2e} relative change")
    return TMatrixValue(k, kp, t1 + fine, order)


def scattering_amplitude(T):
    """``f = -4 pi^2 T`` for an on-shell T-matrix value."""
    if not T.on_shell:
        raise DomainError("scattering amplitude needs |k| = |k'|")
    return -4 * np.pi**2 * T.value


def born_amplitude(V, k_out, k_in, order=1):
    """Scattering amplitudes for an array of outgoing wave vectors."""
    k_out = np.atleast_2d(np.asarray(k_out, dtype=float))
    if order == 1:
        return -4 * np.pi**2 * born_T1(V, k_out, np.asarray(k_in, dtype=float)[None])
    return np.array([scattering_amplitude(born_T(V, ko, k_in, 2)) for ko in k_out])


def cross_section(values_fn, patches, k0, kind="f", max_dtheta=0.05, max_dphi=np.pi / 16):
    """``sigma(patches) = int |f(|k0| w, k0)|^2 dw`` by angular quadrature.

    ``values_fn(k_out, k_in)`` returns either scattering amplitudes
    (``kind='f'``) or T-matrix values (``kind='T'``, then ``|f|^2 = 16 pi^4 |T|^2``).
    """
    if kind not in ("f", "T"):
        raise InvalidParameterError("kind must be 'f' or 'T'")
    k0 = np.asarray(k0, dtype=float).reshape(3)
    kn = np.linalg.norm(k0)
    total = 0.0
    for patch in patches:
        dirs, w = patch.quadrature(max_dtheta=max_dtheta, max_dphi=max_dphi)
        vals = np.asarray(values_fn(kn * dirs, k0))
        mod2 = np.abs(vals) ** 2
        if kind == "T":
            mod2 = 16 * np.pi**4 * mod2
        total += float(np.sum(w * mod2))
    return total


def yukawa_total_born(strength, mu, k):
    """Closed-form total first-Born Yukawa cross section."""
    return 16 * np.pi * strength**2 / (mu**2 * (4 * k * k + mu**2))


def cross_section_table(V, k, order=1, n_angles=91):
    """Rows ``(angle, |f|^2, sigma cumulative from 0 to angle)`` for a central potential."""
    k0 = np.array([0.0, 0.0, float(k)])
    theta = np.linspace(0.0, np.pi, n_angles)
    kout = k * np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=1)
    f2 = np.abs(born_amplitude(V, kout, k0, order)) ** 2
    # cumulative 2 pi int |f|^2 sin(theta) d theta, Gauss-Legendre per interval
    x, w = np.polynomial.legendre.leggauss(8)
    cum = [0.0]
    for a, b in zip(theta[:-1], theta[1:]):
        tt = 0.5 * (a + b) + 0.5 * (b - a) * x
        ko = k * np.stack([np.sin(tt), np.zeros_like(tt), np.cos(tt)], axis=1)
        ff = np.abs(born_amplitude(V, ko, k0, order)) ** 2
        cum.append(cum[-1] + 2 * np.pi * 0.5 * (b - a) * np.sum(w * ff * np.sin(tt)))
    return np.column_stack([theta, f2, np.array(cum)])


def write_cross_section_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle", "f_squared", "sigma_cumulative"])
        for row in table:
            w.writerow([repr(float(v)) for v in row])
