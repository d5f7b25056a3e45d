"""Quadrature rules on the reference triangle and the unit edge.

Triangle rules are exact for all bivariate polynomials up to the
requested total degree; edge rules are Gauss-Legendre on [0, 1].  Low
degrees use classic symmetric rules with closed-form node coordinates;
from degree 6 upward the rules are conical products of Gauss-Legendre
and Gauss-Jacobi lines, whose nodes come from scipy at full machine
precision.  All weights are strictly positive and all points lie inside
the closed reference element.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights; weights sum to the reference-element measure.

    ``points`` has shape (N, 2) for the triangle and (N,) for the edge.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)


def _check_degree(degree: int) -> None:
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(
            f"quadrature degree must be in [1, {MAX_DEGREE}], got {degree}"
        )


def _orbit3(a: float) -> np.ndarray:
    """Symmetric orbit of a point with barycentric coords (1-2a, a, a)."""
    b = 1.0 - 2.0 * a
    return np.array([[a, a], [b, a], [a, b]])


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Rule on the reference triangle (0,0), (1,0), (0,1).

    Exact for all monomials x^a y^b with a + b <= degree.
    """
    _check_degree(degree)
    if degree == 1:
        pts = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        wts = np.array([0.5])
    elif degree == 2:
        pts = _orbit3(1.0 / 6.0)
        wts = np.full(3, 1.0 / 6.0)
    elif degree <= 5:
        # 7-point rule, exact to degree 5; node/weight constants are
        # closed-form so exactness holds to machine precision.
        s15 = np.sqrt(15.0)
        a_in, a_out = (6.0 - s15) / 21.0, (6.0 + s15) / 21.0
        w_in, w_out = (155.0 - s15) / 2400.0, (155.0 + s15) / 2400.0
        pts = np.vstack([[[1.0 / 3.0, 1.0 / 3.0]], _orbit3(a_in), _orbit3(a_out)])
        wts = np.concatenate([[9.0 / 80.0], np.full(3, w_in), np.full(3, w_out)])
    else:
        pts, wts = _conical_product(degree)
    return QuadratureRule(points=pts, weights=wts)


def _conical_product(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre x Gauss-Jacobi product rule collapsed onto the triangle.

    Integrates f over the triangle as
    int_0^1 int_0^1 f(xi (1 - eta), eta) (1 - eta) dxi deta; n points per
    line are exact for line-degree 2n - 1 >= degree.
    """
    n = (degree + 2) // 2
    x_gl, w_gl = roots_legendre(n)           # weight 1 on [-1, 1]
    x_gj, w_gj = roots_jacobi(n, 1.0, 0.0)   # weight (1 - t) on [-1, 1]
    xi = 0.5 * (x_gl + 1.0)
    eta = 0.5 * (x_gj + 1.0)
    w_xi = 0.5 * w_gl
    w_eta = 0.25 * w_gj
    pts = np.empty((n * n, 2))
    wts = np.empty(n * n)
    for i in range(n):
        for j in range(n):
            pts[i * n + j] = (xi[i] * (1.0 - eta[j]), eta[j])
            wts[i * n + j] = w_xi[i] * w_eta[j]
    return pts, wts


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact to the given degree."""
    _check_degree(degree)
    n = (degree + 2) // 2
    x, w = roots_legendre(n)
    return QuadratureRule(points=0.5 * (x + 1.0), weights=0.5 * w)


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
