"""Quadrature rules on triangles, polygons and edges.

Polygons are integrated by fan-triangulating about the area centroid and
applying a collapsed (Duffy) Gauss-Jacobi rule on every triangle, which keeps
all weights positive.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi, roots_legendre

from .exceptions import GeometryError


@dataclass(frozen=True)
class PolygonQuadrature:
    """Quadrature points (physical coordinates) and weights (area units)."""

    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values):
        """Integrate point values of shape ``(n_points, ...)``."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def reference_triangle_rule(degree):
    """Positive rule on the triangle (0,0), (1,0), (0,1), exact to ``degree``.

    Returns ``(points, weights)``; the weights sum to 1/2.
    """
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    n = max(1, math.ceil((degree + 1) / 2))
    tj, wj = roots_jacobi(n, 1.0, 0.0)
    tl, wl = roots_legendre(n)
    u = 0.5 * (1.0 + tj)
    wu = 0.25 * wj
    v = 0.5 * (1.0 + tl)
    wv = 0.5 * wl
    uu, vv = np.meshgrid(u, v, indexing="ij")
    points = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    weights = np.outer(wu, wv).ravel()
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def signed_area(vertices):
    vertices = np.asarray(vertices, dtype=float)
    rel = vertices - vertices[0]
    x, y = rel[:, 0], rel[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def area_centroid(vertices):
    """Area centroid of a simple polygon (shoelace formula)."""
    vertices = np.asarray(vertices, dtype=float)
    origin = vertices[0]
    rel = vertices - origin
    x, y = rel[:, 0], rel[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy]) + origin


def fan_triangles(vertices, center=None):
    """Triangles ``(c, v_k, v_{k+1})`` of the fan about ``center``.

    Returns an array of shape (n, 3, 2). Raises ``GeometryError`` if any fan
    triangle is inverted, i.e. the polygon is not star-shaped about the center.
    """
    vertices = np.asarray(vertices, dtype=float)
    if center is None:
        center = area_centroid(vertices)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    areas = 0.5 * ((a[:, 0] - center[0]) * (b[:, 1] - center[1])
                   - (b[:, 0] - center[0]) * (a[:, 1] - center[1]))
    scale = np.ptp(vertices, axis=0).max() ** 2
    if np.any(areas <= 1e-14 * scale):
        k = int(np.argmin(areas))
        raise GeometryError(
            f"fan triangle {k} about the centroid is inverted or degenerate "
            f"(signed area {areas[k]:.3e}); polygon is not star-shaped about its centroid")
    tri = np.empty((len(vertices), 3, 2))
    tri[:, 0] = center
    tri[:, 1] = a
    tri[:, 2] = b
    return tri


def polygon_quadrature(vertices, degree):
    """Quadrature on a polygon exact for polynomials of total degree ``degree``.

    Parameters
    ----------
    vertices : array-like, shape (n, 2)
        Counterclockwise polygon vertices.
    degree : int
        Polynomial exactness degree, ``>= 0``.
    """
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    tri = fan_triangles(vertices)
    ref_pts, ref_w = reference_triangle_rule(degree)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (tri[:, None, 0, :]
           + ref_pts[None, :, 0:1] * e1[:, None, :]
           + ref_pts[None, :, 1:2] * e2[:, None, :])
    weights = jac[:, None] * ref_w[None, :]
    return PolygonQuadrature(pts.reshape(-1, 2), weights.ravel())


@lru_cache(maxsize=None)
def gauss_lobatto(n):
    """Gauss-Lobatto nodes and weights on [0, 1] with ``n >= 2`` points."""
    if n < 2:
        raise ValueError("Gauss-Lobatto rules need at least 2 points")
    m = n - 1
    coef = np.zeros(m + 1)
    coef[m] = 1.0
    interior = np.sort(legendre.legroots(legendre.legder(coef))) if m > 1 else np.empty(0)
    x = np.concatenate([[-1.0], interior, [1.0]])
    w = 2.0 / (m * (m + 1) * legendre.legval(x, coef) ** 2)
    # symmetrize against root-finder noise
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights
