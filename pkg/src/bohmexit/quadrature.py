"""Gauss-Legendre building blocks used by the flux and cone quadratures."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(a, b, n=8, panels=1):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``.

    Parameters
    ----------
    a, b : float
        Interval end points (``a < b`` not required; an empty interval
        yields zero weights).
    n : int
        Nodes per panel.
    panels : int
        Number of equal-width panels.
    """
    x0, w0 = _leggauss(n)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    w = (half[:, None] * w0[None, :]).ravel()
    return x, w


def panels_for(width, max_panel):
    """Number of panels so that none is wider than ``max_panel``."""
    if max_panel <= 0 or not np.isfinite(width):
        raise ValueError("panel width must be positive and interval finite")
    return max(1, int(np.ceil(abs(width) / max_panel)))
