import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from bohmexit import GaussianPacketSpec, GridState, make_gaussian, momentum_amplitude
from bohmexit.errors import ArityError, DomainError, DomainOverflowError, InvalidParameterError, NotAsymptoticError
from bohmexit.propagate import (
    Potential1D,
    TwoTimeWave,
    analytic_grid_amplitude,
    averaged_barrier_coefficients,
    evolve_scattering,
    extract_outgoing,
    free_evolve,
    local_plane_wave,
    multitime_evolve,
    split_step_evolve,
    square_barrier_transmission,
)
from bohmexit.states import sample_initial_configuration


def _l2(a, b, dx):
    return np.sqrt(np.sum(np.abs(a - b) ** 2) * dx)


class TestFreeEvolution:
    def test_identity(self, gauss3d, rng):
        q = rng.normal(size=(30, 1, 3))
        assert np.array_equal(free_evolve(gauss3d, 0.0)(q), gauss3d(q))

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_semigroup(self, t1, t2):
        s = make_gaussian(GaussianPacketSpec((0.5, 0, -1), (1, 0, 2), (1.0, 0.7, 1.3)))
        q = np.random.default_rng(4).normal(size=(20, 1, 3)) * 3 + s.centers[0] + s.momenta[0] * (t1 + t2)
        a = free_evolve(free_evolve(s, t1), t2)(q)
        b = free_evolve(s, t1 + t2)(q)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_norm_by_quadrature(self):
        s = make_gaussian(GaussianPacketSpec((0.0,), (2.0,), 0.5))
        st_ = free_evolve(s, 7.0)
        total = integrate.quad(lambda x: st_.density(np.array([[[x]]]))[0], -60, 80, limit=500)[0]
        assert abs(total - 1) < 1e-9
        assert abs(s.norm_squared() - 1) < 1e-12

    def test_moments_t10(self, gauss3d):
        s = free_evolve(gauss3d, 10.0)
        g = np.linspace(-45, 45, 151)
        gz = np.linspace(5, 95, 151)
        X = np.stack(np.meshgrid(g, g, gz, indexing="ij"), -1)
        rho = s.density(X.reshape(-1, 1, 3)).reshape(X.shape[:3])
        dV = (g[1] - g[0]) ** 3
        mass = rho.sum() * dV
        mean = np.array([(rho * X[..., i]).sum() * dV for i in range(3)]) / mass
        var = np.array([(rho * (X[..., i] - mean[i]) ** 2).sum() * dV for i in range(3)]) / mass
        assert np.allclose(mean, [0, 0, 50], atol=1e-8)
        assert np.allclose(var, 1 + 100 / 4, rtol=1e-8)

    def test_schrodinger_equation_by_finite_differences(self, entangled_overlap, rng):
        s = entangled_overlap
        q = sample_initial_configuration(s, 5, 20, t=3.0)
        h, ht = 1e-3, 1e-4
        lap = np.zeros(len(q), dtype=complex)
        for p in range(2):
            for a in range(3):
                e = np.zeros((2, 3))
                e[p, a] = h
                lap += (s(q + e, 3.0) - 2 * s(q, 3.0) + s(q - e, 3.0)) / h**2
        dt = (s(q, 3.0 + ht) - s(q, 3.0 - ht)) / (2 * ht)
        scale = np.abs(s(q, 3.0))
        assert np.max(np.abs(1j * dt + 0.5 * lap) / scale) < 1e-4


class TestTwoTime:
    def test_equal_times_reduce(self, entangled_overlap, rng):
        tau = 7.5
        x, y = rng.normal(size=(100, 3)) * 4, rng.normal(size=(100, 3)) * 4
        x[:, 2] += 20
        y[:, 2] += 20
        w = multitime_evolve(entangled_overlap, tau, tau)
        single = free_evolve(entangled_overlap, tau)(np.stack([x, y], 1))
        assert np.max(np.abs(w(x, y) - single)) < 1e-12

    def test_product_factorises(self, product_pair, rng):
        a, b = (make_gaussian(pk) for pk in product_pair.terms[0][1])
        x, y = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        w = multitime_evolve(product_pair, 4.0, 9.0)
        ref = free_evolve(a, 4.0)(x[:, None]) * free_evolve(b, 9.0)(y[:, None])
        assert np.allclose(w(x, y), ref, rtol=1e-12, atol=1e-300)

    def test_order_irrelevant(self, entangled_pm, rng):
        x, y = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        t_first = TwoTimeWave(TwoTimeWave(entangled_pm, 3.0, 0.0).state, 0.0, 5.0)
        s_first = TwoTimeWave(TwoTimeWave(entangled_pm, 0.0, 5.0).state, 3.0, 0.0)
        assert np.max(np.abs(t_first(x, y) - s_first(x, y))) < 1e-12

    def test_norm_fixed_times(self, entangled_overlap):
        st_ = multitime_evolve(entangled_overlap, 30.0, 2.0).state
        full = st_.box_probability(np.full((2, 3), -np.inf), np.full((2, 3), np.inf))
        assert abs(full - 1) < 1e-12

    def test_single_particle_rejected(self, gauss3d):
        with pytest.raises(ArityError):
            multitime_evolve(gauss3d, 1.0, 2.0)

    def test_continuity_equations(self, entangled_overlap):
        """d/dt |phi|^2 + div_x j_x = 0 and the same for (s, y), at 50 points."""
        t, s = 6.0, 3.5
        w = TwoTimeWave(entangled_overlap)
        q = sample_initial_configuration(entangled_overlap, 9, 50, t=(t, s))
        x, y = q[:, 0], q[:, 1]
        h = 1e-5
        scale, _, lap, _ = w.derivatives(x, y, t, s)
        rho = np.abs(scale) ** 2
        div_x, div_y = rho * lap[:, 0].imag, rho * lap[:, 1].imag  # div Im(phi* grad phi) = Im(phi* Lap phi)
        # the free equation gives d_t |phi|^2 = -div j, j = Im(phi* grad phi)
        drho_t = (w.density(x, y, t + h, s) - w.density(x, y, t - h, s)) / (2 * h)
        drho_s = (w.density(x, y, t, s + h) - w.density(x, y, t, s - h)) / (2 * h)
        # 6D densities are small, so compare against the size of the rate itself
        assert np.max(np.abs(drho_t + div_x)) < 1e-6 * np.max(np.abs(drho_t))
        assert np.max(np.abs(drho_s + div_y)) < 1e-6 * np.max(np.abs(drho_s))


class TestLocalPlaneWave:
    def test_modulus(self, gauss3d, rng):
        q = rng.normal(size=(20, 1, 3)) * 5 + [0, 0, 100]
        t = 20.0
        amp = momentum_amplitude(gauss3d)
        lpw = local_plane_wave(gauss3d, q, t)
        assert np.allclose(np.abs(lpw), t**-1.5 * np.abs(amp(q / t)), rtol=1e-13)

    def test_domain(self, gauss3d):
        with pytest.raises(DomainError):
            local_plane_wave(gauss3d, np.zeros(3), 0.0)
        with pytest.warns(UserWarning):
            local_plane_wave(gauss3d, np.zeros(3), 0.5)

    def test_error_decreases(self, gauss3d, rng):
        errs = []
        k = rng.normal(size=(400, 3))
        k = k / np.linalg.norm(k, axis=1, keepdims=True) * rng.uniform(0, 1, (400, 1)) ** (1 / 3) * 1.0
        k = k + [0, 0, 5]  # ball |k - k0| <= 2 sigma_k
        for t in (10.0, 30.0, 100.0):
            q = (k * t)[:, None]
            exact = free_evolve(gauss3d, t)(q)
            approx = local_plane_wave(gauss3d, q, t)
            errs.append(np.max(np.abs(exact - approx)) / np.max(np.abs(exact)))
        assert errs[0] > errs[1] > errs[2]

    def test_two_time_equal_times(self, entangled_pm, rng):
        q = rng.normal(size=(10, 2, 3)) * 3 + [[0, 0, 60], [0, 0, -60]]
        assert np.allclose(local_plane_wave(entangled_pm, q, (20.0, 20.0)), local_plane_wave(entangled_pm, q, 20.0))


@pytest.fixture(scope="module")
def free_grid():
    s = make_gaussian(GaussianPacketSpec((-10.0,), (2.0,), 1.0))
    return s, GridState.from_analytic(s, -60, 0.05, 2400)


class TestSplitStep:
    def test_free_matches_closed_form(self, free_grid):
        s, g = free_grid
        out = split_step_evolve(g, Potential1D.zero(), 0.01, 500)
        exact = free_evolve(s, 5.0)(out.x.reshape(-1, 1, 1))
        assert _l2(out.samples, exact, g.spacing) < 1e-8

    def test_norm_many_steps(self, free_grid):
        _, g = free_grid
        V = Potential1D("gaussian", 1.0, 1.0, 0.0)
        out = split_step_evolve(g, V, 0.001, 10_000)
        assert abs(out.norm_squared() - 1) < 1e-9

    def test_second_order(self, free_grid):
        _, g = free_grid
        V = Potential1D("gaussian", 2.0, 1.0, -6.0)
        T = 4.0
        ref = split_step_evolve(g, V, 0.0025, int(T / 0.0025))
        errs = [_l2(split_step_evolve(g, V, dt, int(round(T / dt))).samples, ref.samples, g.spacing)
                for dt in (0.04, 0.02)]
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_boundary_overflow(self):
        s = make_gaussian(GaussianPacketSpec((0.0,), (3.0,), 1.0))
        g = GridState.from_analytic(s, -15, 0.05, 600)
        with pytest.raises(DomainOverflowError):
            split_step_evolve(g, Potential1D.zero(), 0.01, 1000)

    def test_bad_dt(self, free_grid):
        with pytest.raises(InvalidParameterError):
            split_step_evolve(free_grid[1], Potential1D.zero(), 0.0, 1)

    def test_unresolved_grid(self):
        s = make_gaussian(GaussianPacketSpec((0.0,), (30.0,), 1.0))
        g = GridState.from_analytic(s, -30, 0.1, 600)
        with pytest.raises(InvalidParameterError, match="resolve"):
            split_step_evolve(g, Potential1D.zero(), 0.01, 1)


class TestPotential:
    @pytest.mark.parametrize("V", [Potential1D("gaussian", 3.0, 0.7, 1.0), Potential1D("square", -2.0, 1.5, 0.0)])
    def test_support_radius(self, V):
        x = np.linspace(-40, 40, 200001)
        outside = np.abs(x - V.center) > V.support_radius
        assert np.max(np.abs(V(x[outside]))) < 1e-12

    def test_transmission_against_ode(self):
        """Plane-wave transmission from a direct ODE integration through the barrier."""
        V0, a = 1.0, 1.5
        for k in (0.6, 1.4, np.sqrt(2.0), 2.3):
            E = 0.5 * k * k
            # integrate psi'' = 2 (V - E) psi from the right edge (psi = e^{ikx}) to the left edge
            f = lambda x, y: [y[1], 2 * (V0 - E) * y[0]]
            xr, xl = a / 2, -a / 2
            y0 = [np.exp(1j * k * xr), 1j * k * np.exp(1j * k * xr)]
            sol = integrate.solve_ivp(f, (xr, xl), np.array(y0, dtype=complex), rtol=1e-12, atol=1e-14)
            psi, dpsi = sol.y[:, -1]
            # left: A e^{ikx} + B e^{-ikx}
            A = 0.5 * (psi + dpsi / (1j * k)) * np.exp(-1j * k * xl)
            assert abs(square_barrier_transmission(k, V0, a) - 1 / abs(A) ** 2) < 1e-9

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            Potential1D("square", 1.0, -1.0)
        with pytest.raises(InvalidParameterError):
            Potential1D("wedge", 1.0, 1.0)


@pytest.fixture(scope="module")
def barrier_run():
    """Square barrier V0 = 1, width 1.5; packet from x = -40 with k0 = 1.4, sigma = 5."""
    s = make_gaussian(GaussianPacketSpec((-40.0,), (1.4,), 5.0))
    n, dx = 2**14, 0.125
    g = GridState.from_analytic(s, -0.5 * n * dx + 0.5 * dx, dx, n)
    V = Potential1D("square", 1.0, 1.5, 0.0)
    final, _ = evolve_scattering(g, V, 200.0, 0.005, 0.05)
    return s, g, V, final


class TestOutgoing:
    def test_free_is_identity(self, free_grid):
        s, g = free_grid
        out = split_step_evolve(g, Potential1D.zero(), 0.01, 300)
        amp = extract_outgoing(out, Potential1D.zero())
        ref = analytic_grid_amplitude(s, amp.k)
        mask = np.abs(amp.k) < 12
        assert np.max(np.abs(amp.values[mask] - ref[mask])) < 1e-8

    def test_norm(self, barrier_run):
        *_, final = barrier_run
        amp = extract_outgoing(final, barrier_run[2])
        assert abs(amp.norm_squared() - 1) < 1e-6
        assert abs(amp.half_line(+1) + amp.half_line(-1) - 1) < 1e-6

    def test_transmission(self, barrier_run):
        s, _, V, final = barrier_run
        amp = extract_outgoing(final, V)
        T, R = averaged_barrier_coefficients(s, V)
        assert abs(amp.half_line(+1) / T - 1) < 0.01
        assert abs(amp.half_line(-1) / R - 1) < 0.01

    def test_t_ref_doubling(self, barrier_run):
        s, _, V, final = barrier_run
        later, _ = evolve_scattering(final, V, 200.0, 0.005, 0.05)
        a, b = extract_outgoing(final, V), extract_outgoing(later, V)
        assert _l2(a.values, b.values, a.dk) < 1e-6

    def test_not_asymptotic(self, barrier_run):
        _, g, V, _ = barrier_run
        mid, _ = evolve_scattering(g, V, 28.0, 0.005, 0.05)
        with pytest.raises(NotAsymptoticError):
            extract_outgoing(mid, V)

    def test_t_ref_mismatch(self, barrier_run):
        *_, V, final = barrier_run
        with pytest.raises(InvalidParameterError):
            extract_outgoing(final, V, t_ref=final.time + 10)
