from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyuq.exceptions import GeometryError
from polyuq.quadrature import (area_centroid, fan_triangles, gauss_lobatto, polygon_quadrature,
                               reference_triangle_rule, signed_area)

from conftest import random_convex_polygon


@pytest.mark.parametrize("degree", range(0, 11))
def test_reference_rule_exact_on_monomials(degree):
    pts, w = reference_triangle_rule(degree)
    assert np.all(w > 0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert np.isclose(w @ (pts[:, 0] ** a * pts[:, 1] ** b), exact, rtol=1e-13, atol=0)


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        reference_triangle_rule(-1)


def test_polygon_rule_on_unit_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    q = polygon_quadrature(sq, 6)
    for a in range(4):
        for b in range(4 - a):
            val = q.integrate(q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert np.isclose(val, 1 / ((a + 1) * (b + 1)), rtol=1e-13)


def test_nonconvex_star_polygon():
    # L-shape of area 3, star-shaped about its centroid
    L = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], float)
    q = polygon_quadrature(L, 2)
    assert np.isclose(q.weights.sum(), 3.0)
    assert np.allclose(q.integrate(q.points), 3.0 * area_centroid(L))


def test_fan_rejects_non_star_polygon():
    comb = np.array([[0, 0], [3, 0], [3, 1], [2.9, 1], [2.9, 0.05], [0.1, 0.05], [0.1, 1],
                     [0, 1]], float)
    with pytest.raises(GeometryError):
        fan_triangles(comb)


def test_signed_area_orientation():
    tri = np.array([[0, 0], [1, 0], [0, 1]], float)
    assert signed_area(tri) == pytest.approx(0.5)
    assert signed_area(tri[::-1]) == pytest.approx(-0.5)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 7])
def test_gauss_lobatto(n):
    x, w = gauss_lobatto(n)
    assert x[0] == 0.0 and x[-1] == 1.0
    assert np.allclose(x, 1 - x[::-1], atol=1e-15)
    for k in range(2 * n - 2):
        assert np.isclose(w @ x ** k, 1 / (k + 1), rtol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(1e-3, 1e3))
def test_area_and_centroid_of_random_polygons(seed, scale):
    rng = np.random.default_rng(seed)
    poly = random_convex_polygon(rng, scale=scale, center=rng.uniform(-10, 10, 2) * scale)
    q = polygon_quadrature(poly, 1)
    area = signed_area(poly)
    assert np.isclose(q.weights.sum(), area, rtol=1e-12)
    assert np.allclose(q.integrate(q.points) / area, area_centroid(poly), rtol=1e-10,
                       atol=1e-12 * scale)
