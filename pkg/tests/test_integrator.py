import numpy as np
import pytest
from hypothesis import given, strategies as st

from bohmexit import integrator
from bohmexit.integrator import dopri5, hermite, hermite_derivative


def decay(t, y):
    return -y, np.zeros(y.shape[0], dtype=bool)


def rotation(t, y):
    return np.stack([-y[:, 1], y[:, 0]], axis=1), np.zeros(y.shape[0], dtype=bool)


def final_states(res):
    return res.states[res.offsets[1:] - 1]


def test_exponential_decay_accuracy():
    y0 = np.array([[1.0], [2.0], [-0.5]])
    res = dopri5(decay, 0.0, y0, 5.0, tol=1e-10)
    assert np.all(res.status == integrator.OK)
    assert np.allclose(final_states(res), y0 * np.exp(-5.0), atol=1e-8)


def test_tolerance_halving_improves_error():
    y0 = np.array([[1.0, 0.0]])
    errs = []
    for tol in (1e-6, 5e-7, 2.5e-7, 1.25e-7):
        res = dopri5(rotation, 0.0, y0, 20.0, tol=tol)
        errs.append(np.abs(final_states(res)[0] - [np.cos(20.0), np.sin(20.0)]).max())
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_per_row_end_times():
    y0 = np.ones((3, 1))
    t_end = np.array([1.0, 2.0, 3.0])
    res = dopri5(decay, 0.0, y0, t_end, tol=1e-10)
    assert np.allclose(res.times[res.offsets[1:] - 1], t_end)
    assert np.allclose(final_states(res)[:, 0], np.exp(-t_end), atol=1e-9)


def test_checkpoints_are_hit_exactly():
    marks = [0.3, 1.7, 2.25]
    res = dopri5(rotation, 0.0, np.array([[1.0, 0.0], [0.0, 2.0]]), 3.0, checkpoints=marks)
    for i in range(2):
        t, y, _, _ = res.row(i)
        for m in marks:
            assert np.any(t == m)


def test_knots_strictly_increasing_and_slopes_consistent():
    y0 = np.array([[1.0, 0.0]])
    res = dopri5(rotation, 0.0, y0, 6.0, tol=1e-9)
    t, y, f, _ = res.row(0)
    assert np.all(np.diff(t) > 0)
    assert np.allclose(f, rotation(t, y)[0], atol=1e-12)


def test_stop_predicate_ends_rows_early():
    def grow(t, y):
        return np.ones_like(y), np.zeros(y.shape[0], dtype=bool)

    y0 = np.array([[0.0], [5.0]])
    res = dopri5(grow, 0.0, y0, 100.0, stop=lambda t, y: y[:, 0] > 10.0, max_step=0.5)
    t_last = res.times[res.offsets[1:] - 1]
    assert np.all(t_last < 100.0)
    assert np.all(final_states(res)[:, 0] > 10.0)
    assert np.all(final_states(res)[:, 0] < 10.6)


def test_node_flag_stops_row():
    def field(t, y):
        bad = y[:, 0] >= 1.0
        return np.ones_like(y), bad

    res = dopri5(field, 0.0, np.array([[0.0], [-10.0]]), 5.0, max_step=0.05)
    assert res.status[0] == integrator.NODE
    assert res.status[1] == integrator.OK
    assert final_states(res)[0, 0] < 1.0


def test_initial_node_is_flagged():
    def field(t, y):
        return np.zeros_like(y), np.ones(y.shape[0], dtype=bool)

    res = dopri5(field, 0.0, np.zeros((2, 1)), 1.0)
    assert np.all(res.status == integrator.NODE)
    assert np.all(np.diff(res.offsets) == 1)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 4.0))
def test_hermite_reproduces_cubics(a, b, c, d, h):
    p = np.polynomial.Polynomial([a, b, c, d])
    dp = p.deriv()
    t = np.linspace(0.0, h, 9)
    val = hermite(t, np.zeros_like(t), np.full_like(t, h), p(0.0), p(h), dp(0.0), dp(h))
    assert np.allclose(val, p(t), atol=1e-9 * (1 + np.abs(p(t)).max()))


def test_hermite_with_midpoint_reproduces_quartics():
    p = np.polynomial.Polynomial([0.3, -1.0, 0.5, 2.0, -1.5])
    dp = p.deriv()
    t = np.linspace(0.0, 1.3, 11)
    zeros, h = np.zeros_like(t), np.full_like(t, 1.3)
    cubic = hermite(t, zeros, h, p(0.0), p(1.3), dp(0.0), dp(1.3))
    quart = hermite(t, zeros, h, p(0.0), p(1.3), dp(0.0), dp(1.3), p(0.65))
    assert np.allclose(quart, p(t), atol=1e-12)
    assert np.abs(cubic - p(t)).max() > 1e-3


def test_dense_output_midpoint_accuracy():
    # stored midpoints turn the cubic interpolant into a quartic one
    res = dopri5(rotation, 0.0, np.array([[1.0, 0.0]]), 10.0, tol=1e-10, max_step=0.5)
    t, y, f, m = res.row(0)
    tm = 0.5 * (t[:-1] + t[1:])
    exact = np.stack([np.cos(tm), np.sin(tm)], axis=1)
    assert np.abs(m[1:] - exact).max() < 1e-8
    s = t[:-1] + 0.3 * np.diff(t)
    exact_s = np.stack([np.cos(s), np.sin(s)], axis=1)
    cub = hermite(s, t[:-1], t[1:], y[:-1], y[1:], f[:-1], f[1:])
    quart = hermite(s, t[:-1], t[1:], y[:-1], y[1:], f[:-1], f[1:], m[1:])
    assert np.abs(quart - exact_s).max() < np.abs(cub - exact_s).max()
    assert np.abs(quart - exact_s).max() < 1e-8


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_hermite_derivative_matches_finite_difference(a, b, c, d, e):
    p = np.polynomial.Polynomial([a, b, c, d, e])
    dp = p.deriv()
    t = np.linspace(0.1, 0.9, 7)
    lo, hi = np.zeros_like(t), np.ones_like(t)
    args = (lo, hi, p(0.0), p(1.0), dp(0.0), dp(1.0), p(0.5))
    assert np.allclose(hermite_derivative(t, *args), dp(t), atol=1e-10)
    eps = 1e-6
    fd = (hermite(t + eps, *args[:6]) - hermite(t - eps, *args[:6])) / (2 * eps)
    assert np.allclose(hermite_derivative(t, *args[:6]), fd, atol=1e-6)
