"""Shared oracles for the test suite."""

import itertools

import numpy as np
from scipy import optimize

from bohmexit.exits import chi_square_gof


def quantile_edges(state, particle, axis, clock, n_bins):
    """Marginal quantiles of ``|phi|^2`` along one coordinate, found by root solving the CDF."""
    def F(v):
        return state.marginal_cdf(particle, axis, v, clock)[0]

    qs = [optimize.brentq(lambda v: F(v) - u, -1e3, 1e3, xtol=1e-12)
          for u in np.arange(1, n_bins) / n_bins]
    return np.array([-np.inf, *qs, np.inf])


def box_chi2(state, points, coords, clock, n_bins=4):
    """Pearson test of ``points`` (shape ``(n, P, d)``) against ``|phi|^2`` on a product of quantile bins.

    ``coords`` lists ``(particle, axis)`` pairs; cell probabilities are exact
    box integrals of the density at ``clock`` (one time per particle).
    """
    P, d = state.num_particles, state.dimension
    clock = np.broadcast_to(np.asarray(clock, dtype=float), (P,))
    edges = [quantile_edges(state, p, a, clock, n_bins) for p, a in coords]
    m = n_bins ** len(coords)
    lo = np.full((m, P, d), -np.inf)
    hi = np.full((m, P, d), np.inf)
    for c, idx in enumerate(itertools.product(range(n_bins), repeat=len(coords))):
        for (p, a), i, e in zip(coords, idx, edges):
            lo[c, p, a] = e[i]
            hi[c, p, a] = e[i + 1]
    probs = state.box_probability(lo, hi, clock)
    ids = np.zeros(points.shape[0], dtype=np.int64)
    for (p, a), e in zip(coords, edges):
        ids = ids * n_bins + np.searchsorted(e, points[:, p, a]) - 1
    counts = np.bincount(ids, minlength=m)
    return chi_square_gof(counts, probs)


# pass/fail lines of the acceptance suite, printed by the terminal summary hook
ACCEPTANCE = {}


def verdict(number, title, ok, detail):
    """Record and print one acceptance line; returns ``ok`` for the caller's assert."""
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok
