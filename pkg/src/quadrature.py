"""
Gauss quadrature rules on the reference triangle and the reference edge
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

logger = logging.getLogger(__name__)

# Largest exactness degree handed out by the rule tables
MAX_DEGREE = 40


class QuadratureError(ValueError):
    """Raised for degrees outside the tabulated range."""


@dataclass(frozen=True)
class QuadRule:
    """
    Quadrature rule on a reference cell.

    For the triangle the points are Cartesian coordinates (x, y) of the unit
    triangle {x, y >= 0, x + y <= 1}; for the edge they are coordinates in
    [0, 1]. Weights sum to the reference measure (1/2 or 1).
    """
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def num_points(self) -> int:
        return int(self.weights.shape[0])

    @property
    def barycentric(self) -> np.ndarray:
        """Barycentric coordinates (1 - x - y, x, y) of triangle points."""
        if self.points.ndim != 2:
            raise QuadratureError("barycentric coordinates only exist for triangle rules")
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack((1.0 - x - y, x, y))


def _check_degree(degree: int):
    if int(degree) != degree or degree < 0:
        raise QuadratureError(f"quadrature degree must be a nonnegative integer, got {degree!r}")
    if degree > MAX_DEGREE:
        raise QuadratureError(f"quadrature degree {degree} exceeds the table maximum {MAX_DEGREE}")


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadRule:
    """
    Gauss-Legendre rule on [0, 1] exact for polynomials of degree <= degree.

    Args:
        degree: Requested exactness degree

    Returns:
        QuadRule with degree // 2 + 1 points
    """
    _check_degree(degree)
    n = degree // 2 + 1
    nodes, weights = np.polynomial.legendre.leggauss(n)
    points = 0.5 * (nodes + 1.0)
    rule = QuadRule(points=points, weights=0.5 * weights, degree=int(degree))
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """
    Collapsed Gauss rule on the reference triangle.

    The square [0, 1]^2 is mapped onto the triangle by x = u, y = (1 - u) v.
    The Jacobian factor (1 - u) is absorbed into a Gauss-Jacobi rule in u,
    a Gauss-Legendre rule handles v. All weights are positive and all
    points lie strictly inside the triangle.

    Args:
        degree: Requested exactness degree (total degree of bivariate polynomials)

    Returns:
        QuadRule exact for all polynomials of total degree <= degree
    """
    _check_degree(degree)
    n = degree // 2 + 1
    # Gauss-Jacobi with weight (1 - t)^1 on [-1, 1]
    t, wt = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (t + 1.0)
    wu = 0.25 * wt
    v, wv = np.polynomial.legendre.leggauss(n)
    v = 0.5 * (v + 1.0)
    wv = 0.5 * wv

    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu.ravel()
    y = ((1.0 - uu) * vv).ravel()
    weights = np.outer(wu, wv).ravel()

    logger.debug("triangle rule of degree %d with %d points", degree, weights.size)
    rule = QuadRule(points=np.column_stack((x, y)), weights=weights, degree=int(degree))
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


def stiffness_degree(k: int) -> int:
    """Rule degree for products of discrete functions of RT^k / P^{k+1} type."""
    return 2 * (k + 2)


def load_degree(k: int) -> int:
    """Rule degree for integrals involving right-hand sides or exact solutions."""
    return max(2 * k + 6, 10)
