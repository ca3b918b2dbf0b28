"""Gauss quadrature on the reference quad, triangle and unit interval."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .reference import QUAD, TRI

MAX_DEGREE = 40


def _npts(degree: int) -> int:
    return degree // 2 + 1


@lru_cache(maxsize=None)
def gauss_1d(degree: int):
    """Gauss-Legendre points/weights on [-1, 1] exact for polynomials of ``degree``."""
    if degree < 0 or degree > MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}")
    x, w = roots_legendre(_npts(degree))
    return x, w


@lru_cache(maxsize=None)
def quadrature_rule(shape: str, degree: int):
    """Points (m, 2) and positive weights (m,) exact to total ``degree``.

    Quads use a tensor Gauss rule on [-1,1]^2 (weights sum to 4).  Triangles
    use the collapsed Gauss-Jacobi product rule on the unit right triangle
    (weights sum to 1/2).
    """
    if degree < 1 or degree > MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}")
    n = _npts(degree)
    if shape == QUAD:
        x, w = roots_legendre(n)
        xx, yy = np.meshgrid(x, x, indexing="xy")
        ww = np.outer(w, w)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return pts, ww.ravel()
    if shape == TRI:
        a, wa = roots_legendre(n)
        # one extra point absorbs the (1 - b) collapse factor
        b, wb = roots_jacobi(n, 1.0, 0.0)
        aa, bb = np.meshgrid(a, b, indexing="xy")
        wab = np.outer(wb, wa)
        x = 0.25 * (1.0 + aa) * (1.0 - bb)
        y = 0.5 * (1.0 + bb)
        pts = np.column_stack([x.ravel(), y.ravel()])
        return pts, wab.ravel() / 8.0
    raise ValueError(f"unknown shape {shape!r}")


@lru_cache(maxsize=None)
def line_rule(degree: int):
    """Gauss points/weights on [0, 1]."""
    x, w = gauss_1d(degree)
    return 0.5 * (x + 1.0), 0.5 * w
