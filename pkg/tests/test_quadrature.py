"""
Tests for the edge and triangle quadrature rules
"""

import sys
from math import factorial
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from quadrature import MAX_DEGREE, QuadratureError, edge_rule, load_degree, stiffness_degree, triangle_rule


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@given(degree=st.integers(min_value=0, max_value=20), seed=st.integers(min_value=0, max_value=2 ** 16))
@settings(max_examples=40, deadline=None)
def test_triangle_rule_integrates_random_polynomials(degree, seed):
    rng = np.random.default_rng(seed)
    rule = triangle_rule(degree)
    x, y = rule.points[:, 0], rule.points[:, 1]
    approx, exact = 0.0, 0.0
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c = rng.uniform(-1.0, 1.0)
            approx += c * (rule.weights @ (x ** a * y ** b))
            exact += c * monomial_integral(a, b)
    assert abs(approx - exact) <= 1e-13 * max(1.0, abs(exact))


@pytest.mark.parametrize("degree", [0, 3, 10, 40])
def test_triangle_rule_points_and_weights(degree):
    rule = triangle_rule(degree)
    assert np.all(rule.weights > 0)
    assert np.isclose(rule.weights.sum(), 0.5, atol=1e-14)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert np.all((x > 0) & (y > 0) & (x + y < 1))
    assert np.allclose(rule.barycentric.sum(axis=1), 1.0)


@pytest.mark.parametrize("degree", [0, 1, 6, 13])
def test_edge_rule_exactness(degree):
    rule = edge_rule(degree)
    assert rule.num_points == degree // 2 + 1
    for p in range(degree + 1):
        assert abs(rule.weights @ rule.points ** p - 1.0 / (p + 1)) < 1e-14


def test_edge_rule_has_no_barycentric_coordinates():
    with pytest.raises(QuadratureError):
        edge_rule(3).barycentric


@pytest.mark.parametrize("degree", [-1, MAX_DEGREE + 1, 2.5])
def test_invalid_degree_rejected(degree):
    with pytest.raises(QuadratureError):
        triangle_rule(degree)


def test_rule_degrees():
    assert stiffness_degree(0) == 4
    assert stiffness_degree(3) == 10
    assert load_degree(0) == 10
    assert load_degree(3) == 12
