import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.spatial.transform import Rotation

from bohmexit import Patch, Potential3D, born_T, born_amplitude, cross_section, scattering_amplitude
from bohmexit.amplitudes import (
    TMatrixValue,
    born_T1,
    cross_section_table,
    write_cross_section_csv,
    yukawa_total_born,
)
from bohmexit.errors import DomainError, InvalidParameterError
from bohmexit.quadrature import gauss_legendre

YUK = Potential3D.yukawa(0.1, 1.0)
K_IN = np.array([0.0, 0.0, 1.0])
K_OUT = np.array([1.0, 0.0, 0.0])  # 90 degrees


def brute_force_T1(V, k, kp, r_max=36.0):
    """``(2 pi)^-3 int exp(-i k.x) V(x) exp(i k'.x) d^3x`` on a dense spherical grid."""
    r, wr = gauss_legendre(0.0, r_max, 8, 60)
    u, wu = np.polynomial.legendre.leggauss(96)
    phi = np.linspace(0, 2 * np.pi, 97)[:-1]
    wp = np.full(phi.size, 2 * np.pi / phi.size)
    s = np.sqrt(1 - u**2)
    dirs = np.stack([s[:, None] * np.cos(phi), s[:, None] * np.sin(phi), np.broadcast_to(u[:, None], (96, 96))],
                    axis=-1)
    q = np.asarray(k) - np.asarray(kp)
    phase = np.exp(-1j * r[:, None, None] * (dirs @ q)[None])
    radial = wr * r**2 * V(r)
    ang = np.outer(wu, wp)
    return np.einsum("r,rab,ab->", radial, phase, ang) / (2 * np.pi) ** 3


def yukawa_transform_oracle(gamma, mu, q):
    """``V_hat(q) = (4 pi gamma / q) int_0^inf exp(-mu r) sin(q r) dr`` by weighted quadrature."""
    val = integrate.quad(lambda r: np.exp(-mu * r), 0, np.inf, weight="sin", wvar=q)[0]
    return 4 * np.pi * gamma / q * val


def second_order_oracle(V, k, kp):
    """Principal value plus half-residue form of the second Born term, by scipy quadrature."""
    kap = np.linalg.norm(kp)

    def ang(rho):
        def f(ph, c):
            p = rho * np.array([np.sqrt(1 - c * c) * np.cos(ph), np.sqrt(1 - c * c) * np.sin(ph), c])
            return born_T1(V, k, p) * born_T1(V, p, kp)
        return integrate.dblquad(f, -1, 1, 0, 2 * np.pi, epsabs=1e-14, epsrel=1e-11)[0]

    F = lambda r: r * r * ang(r)  # noqa: E731
    pv = integrate.quad(lambda r: -2 * F(r) / (r + kap), 0, 2 * kap, weight="cauchy", wvar=kap,
                        epsabs=1e-14, limit=200)[0]
    tail = integrate.quad(lambda r: 2 * F(r) / (kap**2 - r**2), 2 * kap, np.inf, epsabs=1e-14, limit=200)[0]
    return pv + tail - 1j * np.pi * F(kap) / kap


# -- T matrix ------------------------------------------------------------------------------------


def test_zero_potential():
    V0 = Potential3D.yukawa(0.0, 1.0)
    for order in (1, 2):
        T = born_T(V0, K_OUT, K_IN, order)
        assert T.value == 0
        assert scattering_amplitude(T) == 0


@given(st.floats(0.0, np.pi), st.floats(0.0, 2 * np.pi), st.floats(0.0, np.pi), st.floats(0.0, 2 * np.pi))
def test_first_order_depends_on_transfer_only(a, b, c, d):
    # two pairs with the same q = k - k': translate both vectors by the same amount
    k = np.array([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a)])
    kp = np.array([np.sin(c) * np.cos(d), np.sin(c) * np.sin(d), np.cos(c)])
    shift = np.array([0.3, -1.1, 0.7])
    t1 = born_T(YUK, k, kp).value
    t2 = born_T(YUK, k + shift, kp + shift).value
    assert abs(t1 - t2) <= 1e-10 * abs(t1)


def test_first_order_brute_force_oracle():
    value = born_T(YUK, K_OUT, K_IN).value
    oracle = brute_force_T1(YUK, K_OUT, K_IN)
    assert abs(value - oracle) < 1e-6 * abs(oracle)


def test_gaussian_well_first_order_oracle():
    V = Potential3D.gaussian_well(0.7, 1.3)
    k, kp = np.array([0.6, 0.0, 0.8]), np.array([0.0, 0.0, 1.0])
    assert abs(born_T(V, k, kp).value - brute_force_T1(V, k, kp, r_max=14.0)) < 1e-8


def test_second_order_against_principal_value_oracle():
    t2 = born_T(YUK, K_OUT, K_IN, order=2).value - born_T(YUK, K_OUT, K_IN).value
    oracle = second_order_oracle(YUK, K_OUT, K_IN)
    assert abs(t2 - oracle) < 1e-8 * abs(oracle)
    assert t2.imag < 0


def test_second_order_scales_as_strength_squared():
    def correction(g):
        V = Potential3D.yukawa(g, 1.0)
        return abs(born_T(V, K_OUT, K_IN, 2).value - born_T(V, K_OUT, K_IN, 1).value)

    for g in (0.01, 0.05):
        assert abs(correction(2 * g) / correction(g) - 4.0) < 0.2


def test_rotation_covariance():
    rots = Rotation.random(20, random_state=3).as_matrix()
    ref1 = abs(born_T(YUK, K_OUT, K_IN).value)
    ref2 = abs(born_T(YUK, K_OUT, K_IN, 2).value)
    for i, Rm in enumerate(rots):
        assert abs(abs(born_T(YUK, Rm @ K_OUT, Rm @ K_IN).value) - ref1) < 1e-10 * ref1
        if i < 3:
            assert abs(abs(born_T(YUK, Rm @ K_OUT, Rm @ K_IN, 2).value) - ref2) < 1e-10 * ref2


def test_invalid_inputs():
    with pytest.raises(InvalidParameterError):
        born_T(YUK, K_OUT, K_IN, order=3)
    with pytest.raises(InvalidParameterError):
        Potential3D.yukawa(0.1, 0.0)
    with pytest.raises(InvalidParameterError):
        Potential3D("coulomb")
    with pytest.raises(DomainError):
        scattering_amplitude(born_T(YUK, 2 * K_OUT, K_IN))


# -- amplitudes ------------------------------------------------------------------------------------


@pytest.mark.parametrize("theta", [0.2, np.pi / 2, 2.5])
def test_first_born_yukawa_amplitude(theta):
    k = 1.3
    kin = np.array([0.0, 0.0, k])
    kout = k * np.array([np.sin(theta), 0.0, np.cos(theta)])
    q = np.linalg.norm(kout - kin)
    f = scattering_amplitude(born_T(YUK, kout, kin))
    oracle = -4 * np.pi**2 * yukawa_transform_oracle(0.1, 1.0, q) / (2 * np.pi) ** 3
    assert abs(f - oracle) < 1e-10
    assert abs(f - (-2 * 0.1 / (q * q + 1.0))) < 1e-12


def test_amplitude_modulus_identity():
    T = born_T(YUK, K_OUT, K_IN, order=2)
    f = scattering_amplitude(T)
    assert abs(abs(f) ** 2 - 16 * np.pi**4 * abs(T.value) ** 2) <= 1e-14 * abs(f) ** 2


def test_vectorised_amplitude_matches_scalar():
    kout = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, -1.0]])
    fa = born_amplitude(YUK, kout, K_IN)
    for i, ko in enumerate(kout):
        assert np.isclose(fa[i], scattering_amplitude(born_T(YUK, ko, K_IN)))


def test_on_shell_flag():
    assert TMatrixValue(K_OUT, K_IN, 0j, 1).on_shell
    assert not TMatrixValue(1.01 * K_OUT, K_IN, 0j, 1).on_shell


# -- cross sections ----------------------------------------------------------------------------------


def f1(kout, kin):
    return born_amplitude(YUK, kout, kin)


def t1(kout, kin):
    return born_T1(YUK, kout, np.asarray(kin)[None])


def test_empty_patch_set():
    assert cross_section(f1, [], K_IN) == 0.0


def test_additivity():
    a = Patch(0, 0.0, 0.7, 0.0, 2.0)
    b = Patch(1, 0.7, 1.9, 0.0, 2.0)
    ab = Patch(2, 0.0, 1.9, 0.0, 2.0)
    total = cross_section(f1, [a, b], K_IN)
    assert abs(total - (cross_section(f1, [a], K_IN) + cross_section(f1, [b], K_IN))) < 1e-15
    assert abs(total - cross_section(f1, [ab], K_IN)) < 1e-10 * total


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_total_cross_section(k):
    kin = np.array([0.0, 0.0, k])
    sigma = cross_section(f1, [Patch(0)], kin)

    def integrand(theta):
        q2 = 2 * k * k * (1 - np.cos(theta))
        return 2 * np.pi * np.sin(theta) * (2 * 0.1 / (q2 + 1.0)) ** 2

    oracle = integrate.quad(integrand, 0, np.pi, epsabs=0, epsrel=1e-13)[0]
    assert abs(sigma - oracle) < 1e-6 * oracle
    assert abs(yukawa_total_born(0.1, 1.0, k) - oracle) < 1e-12 * oracle


def test_amplitude_and_t_matrix_forms_agree():
    patches = [Patch(0, 0.0, 0.5), Patch(1, 0.5, np.pi, 0.0, 3.0)]
    a = cross_section(f1, patches, K_IN, kind="f")
    b = cross_section(t1, patches, K_IN, kind="T")
    assert abs(a - b) <= 1e-14 * a
    with pytest.raises(InvalidParameterError):
        cross_section(f1, patches, K_IN, kind="S")


def test_cross_section_table(tmp_path):
    table = cross_section_table(YUK, 1.0, n_angles=31)
    assert table.shape == (31, 3)
    assert np.all(np.diff(table[:, 2]) > 0)
    assert abs(table[-1, 2] - yukawa_total_born(0.1, 1.0, 1.0)) < 1e-10
    path = tmp_path / "xs.csv"
    write_cross_section_csv(path, table)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["angle", "f_squared", "sigma_cumulative"]
    assert np.allclose(np.array(rows[1:], dtype=float), table, rtol=0, atol=0)
