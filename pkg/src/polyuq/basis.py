"""Scaled monomial bases and per-element quadrature on whole meshes.

The basis on an element ``E`` with area centroid ``x_E`` and diameter ``h_E``
is ``m_a(x) = ((x - x_E) / h_E) ** a`` for multi-indices ``|a| <= p`` in
graded-lexicographic order: ``1, X, Y, X^2, XY, Y^2, ...``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import GeometryError
from .quadrature import reference_triangle_rule

__all__ = [
    "n_poly",
    "monomial_exponents",
    "eval_monomials",
    "eval_monomial_gradients",
    "StackedQuadrature",
    "element_quadrature",
    "element_grams",
    "weighted_grams",
    "weighted_moments",
    "ScaledMonomialBasis",
]


def n_poly(p):
    """Dimension of the polynomials of total degree ``<= p`` in two variables."""
    return (p + 1) * (p + 2) // 2 if p >= 0 else 0


@lru_cache(maxsize=None)
def monomial_exponents(p):
    """Exponent pairs ``(a, b)`` of ``X^a Y^b`` in graded-lex order, shape (n_p, 2)."""
    out = [(d - j, j) for d in range(p + 1) for j in range(d + 1)]
    arr = np.array(out, dtype=np.int64).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


def _powers(x, p):
    out = np.empty((len(x), p + 1))
    out[:, 0] = 1.0
    for k in range(1, p + 1):
        out[:, k] = out[:, k - 1] * x
    return out


def eval_monomials(xi, p):
    """Values of all scaled monomials at scaled coordinates ``xi`` (n, 2) -> (n, n_p)."""
    xi = np.asarray(xi, dtype=float)
    ex = monomial_exponents(p)
    px = _powers(xi[:, 0], p)
    py = _powers(xi[:, 1], p)
    return px[:, ex[:, 0]] * py[:, ex[:, 1]]


def eval_monomial_gradients(xi, p):
    """Gradients with respect to the scaled coordinates, shape (n, n_p, 2).

    Divide by ``h_E`` to obtain physical gradients.
    """
    xi = np.asarray(xi, dtype=float)
    ex = monomial_exponents(p)
    px = _powers(xi[:, 0], p)
    py = _powers(xi[:, 1], p)
    # d/dX X^a = a X^(a-1); for a = 0 the factor a kills the clipped index
    a, b = ex[:, 0], ex[:, 1]
    g = np.empty((len(xi), len(ex), 2))
    g[:, :, 0] = a * px[:, np.maximum(a - 1, 0)] * py[:, b]
    g[:, :, 1] = b * px[:, a] * py[:, np.maximum(b - 1, 0)]
    return g


@dataclass(frozen=True)
class StackedQuadrature:
    """Quadrature for every element of a mesh, concatenated in element order.

    Attributes
    ----------
    points, weights :
        Physical points (Q, 2) and weights (Q,).
    element : ndarray of int
        Owning element of every point.
    offsets : ndarray of int
        ``points[offsets[k]:offsets[k+1]]`` belong to element ``k``.
    scaled :
        Scaled coordinates ``(x - x_E) / h_E`` of every point.
    """

    points: np.ndarray
    weights: np.ndarray
    element: np.ndarray
    offsets: np.ndarray
    scaled: np.ndarray

    def element_sum(self, values):
        """Sum point contributions per element (first axis)."""
        return np.add.reduceat(values, self.offsets[:-1], axis=0)


def element_quadrature(mesh, degree):
    """Centroid-fan quadrature of the given exactness degree on every element (cached)."""
    key = ("quadrature", int(degree))
    cached = mesh._cache.get(key)
    if cached is not None:
        return cached
    ref_pts, ref_w = reference_triangle_rule(degree)
    nq = len(ref_w)
    sizes = np.array([len(e) for e in mesh.elements])
    counts = sizes * nq
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = offsets[-1]
    points = np.empty((total, 2))
    weights = np.empty(total)
    for n in np.unique(sizes):
        ks = np.flatnonzero(sizes == n)
        idx = np.stack([mesh.elements[k] for k in ks])
        a = mesh.vertices[idx]                       # (g, n, 2)
        b = np.roll(a, -1, axis=1)
        c = mesh.centroids[ks][:, None, :]           # (g, 1, 2)
        e1 = a - c
        e2 = b - c
        jac = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]   # (g, n)
        scale = mesh.diameters[ks][:, None] ** 2
        bad = jac <= 2e-14 * scale
        if bad.any():
            g = int(np.flatnonzero(bad.any(axis=1))[0])
            raise GeometryError("centroid fan has an inverted or degenerate triangle; "
                                "element is not star-shaped about its centroid",
                                element=int(ks[g]))
        pts = (c[:, :, None, :] + ref_pts[None, None, :, 0:1] * e1[:, :, None, :]
               + ref_pts[None, None, :, 1:2] * e2[:, :, None, :])   # (g, n, nq, 2)
        w = jac[:, :, None] * ref_w[None, None, :]
        idx_pts = offsets[ks][:, None] + np.arange(n * nq)
        points[idx_pts] = pts.reshape(len(ks), -1, 2)
        weights[idx_pts] = w.reshape(len(ks), -1)
    element = np.repeat(np.arange(mesh.n_elements), counts)
    scaled = (points - mesh.centroids[element]) / mesh.diameters[element][:, None]
    for arr in (points, weights, element, offsets, scaled):
        arr.setflags(write=False)
    quad = StackedQuadrature(points, weights, element, offsets, scaled)
    mesh._cache[key] = quad
    return quad


def _chunks(mesh, quad, chunk=2048):
    """Yield ``(ks, point_index)`` blocks of elements with equal point counts."""
    for n, ks in mesh._groups:
        npe = int(quad.offsets[ks[0] + 1] - quad.offsets[ks[0]])
        for s in range(0, len(ks), chunk):
            kc = ks[s:s + chunk]
            yield kc, quad.offsets[kc][:, None] + np.arange(npe)


def weighted_grams(mesh, p, degree, values=None, kind="gradient"):
    """Per-element Gram matrices of the scaled monomials with a weight function.

    ``values`` holds the weight at the points of ``element_quadrature(mesh,
    degree)`` (``None`` means 1). ``kind`` is ``'gradient'`` for
    ``int w grad m_a . grad m_b`` (physical gradients) or ``'mass'`` for
    ``int w m_a m_b``. Returns an array (n_elements, n_p, n_p).
    """
    quad = element_quadrature(mesh, degree)
    w = quad.weights if values is None else quad.weights * values
    npol = n_poly(p)
    out = np.empty((mesh.n_elements, npol, npol))
    for kc, idx in _chunks(mesh, quad):
        c, npe = idx.shape
        xi = quad.scaled[idx].reshape(-1, 2)
        wc = w[idx]
        if kind == "gradient":
            g = eval_monomial_gradients(xi, p).reshape(c, npe, npol, 2)
            g = g / mesh.diameters[kc][:, None, None, None]
            M = g.transpose(0, 1, 3, 2).reshape(c, npe * 2, npol)
            wc = np.repeat(wc, 2, axis=1)
        elif kind == "mass":
            M = eval_monomials(xi, p).reshape(c, npe, npol)
        else:
            raise ValueError(f"unknown Gram kind {kind!r}")
        G = np.matmul(M.transpose(0, 2, 1) * wc[:, None, :], M)
        out[kc] = 0.5 * (G + G.transpose(0, 2, 1))
    return out


def weighted_moments(mesh, p, degree, values):
    """``int_E w m_a`` per element for point values ``w`` of the degree-``degree`` rule."""
    quad = element_quadrature(mesh, degree)
    w = quad.weights * values
    npol = n_poly(p)
    out = np.empty((mesh.n_elements, npol))
    for kc, idx in _chunks(mesh, quad):
        c, npe = idx.shape
        M = eval_monomials(quad.scaled[idx].reshape(-1, 2), p).reshape(c, npe, npol)
        out[kc] = np.matmul(w[idx][:, None, :], M)[:, 0, :]
    return out


def element_grams(mesh, p):
    """Monomial mass and gradient Gram matrices on every element (cached).

    Returns ``(H, K)`` of shape ``(n_elements, n_p, n_p)`` with
    ``H[k] = int_E m_a m_b`` and ``K[k] = int_E grad m_a . grad m_b``
    (physical gradients).
    """
    key = ("grams", int(p))
    cached = mesh._cache.get(key)
    if cached is not None:
        return cached
    H = weighted_grams(mesh, p, 2 * p, kind="mass")
    K = weighted_grams(mesh, p, 2 * p, kind="gradient")
    H.setflags(write=False)
    K.setflags(write=False)
    mesh._cache[key] = (H, K)
    return H, K


class ScaledMonomialBasis:
    """Scaled monomials of degree ``<= p`` on one element."""

    def __init__(self, p, center, diameter):
        if p < 0:
            raise ValueError("p must be >= 0")
        if not diameter > 0:
            raise ValueError("element diameter must be positive")
        self.p = int(p)
        self.center = np.asarray(center, dtype=float)
        self.diameter = float(diameter)

    @property
    def size(self):
        return n_poly(self.p)

    @property
    def exponents(self):
        return monomial_exponents(self.p)

    def scaled(self, x):
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.center) / self.diameter

    def values(self, x):
        return eval_monomials(self.scaled(x), self.p)

    def gradients(self, x):
        return eval_monomial_gradients(self.scaled(x), self.p) / self.diameter
