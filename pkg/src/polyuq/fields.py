"""Piecewise polynomial fields in per-element scaled monomial coefficients."""
import csv
from math import comb

import numpy as np
import scipy.sparse as sp

from .basis import element_grams, element_quadrature, eval_monomials, monomial_exponents, n_poly

__all__ = [
    "PiecewisePolyField",
    "restriction_matrix",
    "restrict_to_fine",
    "axpy",
    "broken_h1_seminorm",
    "l2_norm",
    "write_field_csv",
    "read_field_csv",
]


class PiecewisePolyField:
    """Degree-``p`` polynomial on every element of ``mesh``.

    ``coeffs[k]`` are the coefficients of the scaled monomials of element ``k``.
    """

    def __init__(self, mesh, p, coeffs):
        coeffs = np.array(coeffs, dtype=float)
        npol = n_poly(p)
        if coeffs.shape == (mesh.n_elements * npol,):
            coeffs = coeffs.reshape(mesh.n_elements, npol)
        if coeffs.shape != (mesh.n_elements, npol):
            raise ValueError(f"coefficient array must have shape ({mesh.n_elements}, {npol}), "
                             f"got {coeffs.shape}")
        coeffs.setflags(write=False)
        self.mesh = mesh
        self.p = int(p)
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, mesh, p):
        return cls(mesh, p, np.zeros((mesh.n_elements, n_poly(p))))

    def _check_compatible(self, other):
        if other.mesh is not self.mesh or other.p != self.p:
            raise ValueError("fields live on different meshes or have different orders")

    def __add__(self, other):
        self._check_compatible(other)
        return PiecewisePolyField(self.mesh, self.p, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_compatible(other)
        return PiecewisePolyField(self.mesh, self.p, self.coeffs - other.coeffs)

    def __mul__(self, a):
        return PiecewisePolyField(self.mesh, self.p, float(a) * self.coeffs)

    __rmul__ = __mul__

    def evaluate(self, points, elements):
        """Values at ``points`` lying in the given ``elements`` (test helper)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        elements = np.asarray(elements, dtype=np.int64)
        xi = (points - self.mesh.centroids[elements]) / self.mesh.diameters[elements][:, None]
        return (eval_monomials(xi, self.p) * self.coeffs[elements]).sum(axis=1)

    def locate(self, points):
        """Index of an element containing each point (-1 if none)."""
        from matplotlib.path import Path
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(points), -1, dtype=np.int64)
        for k in range(self.mesh.n_elements):
            pending = out < 0
            if not pending.any():
                break
            inside = Path(self.mesh.element_vertices(k)).contains_points(points[pending], radius=1e-12)
            idx = np.flatnonzero(pending)[inside]
            out[idx] = k
        return out

    def moment_vector(self, f):
        """``int_E f m_a`` per element with a rule of degree ``2p + 2``."""
        from .vem import _eval_source
        q = element_quadrature(self.mesh, 2 * self.p + 2)
        vals = eval_monomials(q.scaled, self.p)
        fv = _eval_source(f, q.points)
        return q.element_sum((q.weights * fv)[:, None] * vals)

    def element_means(self):
        H, _ = element_grams(self.mesh, self.p)
        return (H[:, 0, :] * self.coeffs).sum(axis=1) / self.mesh.areas

    def broken_h1_seminorm(self):
        return broken_h1_seminorm(self)

    def l2_norm(self):
        return l2_norm(self)

    def __repr__(self):
        return f"PiecewisePolyField(p={self.p}, n_elements={self.mesh.n_elements})"


def _change_of_basis(p, d, s):
    """Re-expansion matrices for new center offset ``d`` (g, 2) and scale ``s`` (g,).

    With ``X = d + s X'`` the old monomial ``X^a Y^b`` equals
    ``sum T[new, old] X'^i Y'^j``. Returns ``T`` of shape (g, n_p, n_p).
    """
    ex = monomial_exponents(p)
    index = {tuple(e): i for i, e in enumerate(ex)}
    g = len(s)
    T = np.zeros((g, len(ex), len(ex)))
    dx, dy = d[:, 0], d[:, 1]
    for col, (a, b) in enumerate(ex):
        for i in range(a + 1):
            for j in range(b + 1):
                row = index[(i, j)]
                T[:, row, col] += (comb(a, i) * comb(b, j) * dx ** (a - i) * dy ** (b - j)
                                   * s ** (i + j))
    return T


def restriction_matrix(hierarchy, level, target_level, p):
    """Sparse exact restriction of coefficients from ``level`` to ``target_level`` (cached)."""
    key = ("restriction", level, target_level, p)
    cache = hierarchy._cache
    R = cache.get(key)
    if R is not None:
        return R
    if target_level < level:
        raise ValueError(f"target level {target_level} is coarser than field level {level}")
    coarse = hierarchy.mesh(level)
    fine = hierarchy.mesh(target_level)
    anc = hierarchy.ancestor_map(target_level, level)
    hc = coarse.diameters[anc]
    d = (fine.centroids - coarse.centroids[anc]) / hc[:, None]
    s = fine.diameters / hc
    T = _change_of_basis(p, d, s)
    npol = n_poly(p)
    nf = fine.n_elements
    rows = np.broadcast_to((np.arange(nf)[:, None, None] * npol
                            + np.arange(npol)[None, :, None]), T.shape).ravel()
    cols = np.broadcast_to((anc[:, None, None] * npol
                            + np.arange(npol)[None, None, :]), T.shape).ravel()
    R = sp.csr_matrix((T.ravel(), (rows, cols)), shape=(nf * npol, coarse.n_elements * npol))
    cache[key] = R
    return R


def restrict_to_fine(field, hierarchy, target_level):
    """Exact re-expansion of ``field`` on the elements of a finer hierarchy level."""
    level = hierarchy.level_of(field.mesh)
    R = restriction_matrix(hierarchy, level, target_level, field.p)
    return PiecewisePolyField(hierarchy.mesh(target_level), field.p, R @ field.coeffs.ravel())


def axpy(a, x, y):
    """``a * x + y`` for fields on the same mesh and order."""
    x._check_compatible(y)
    return PiecewisePolyField(x.mesh, x.p, a * x.coeffs + y.coeffs)


def broken_h1_seminorm(field):
    """Sum over elements of the squared H1 seminorm, square-rooted."""
    return float(np.sqrt(max(broken_h1_squared(field.mesh, field.p, field.coeffs[None])[0], 0.0)))


def l2_norm(field):
    return float(np.sqrt(max(l2_squared(field.mesh, field.p, field.coeffs[None])[0], 0.0)))


def broken_h1_squared(mesh, p, coeffs):
    """Squared broken H1 seminorms of a batch of coefficient arrays (n, n_el, n_p)."""
    _, K = element_grams(mesh, p)
    per_elem = np.einsum("sea,eab,seb->se", coeffs, K, coeffs)
    return per_elem.sum(axis=1)


def l2_squared(mesh, p, coeffs):
    H, _ = element_grams(mesh, p)
    per_elem = np.einsum("sea,eab,seb->se", coeffs, H, coeffs)
    return per_elem.sum(axis=1)


def write_field_csv(field, path):
    """Snapshot as CSV rows ``element,c0,c1,...`` with round-trip exact floats."""
    npol = n_poly(field.p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element"] + [f"c{i}" for i in range(npol)])
        for k, row in enumerate(field.coeffs.tolist()):
            w.writerow([k] + [repr(v) for v in row])


def read_field_csv(path, mesh, p):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    coeffs = np.zeros((mesh.n_elements, n_poly(p)))
    for r in body:
        coeffs[int(r[0])] = [float(v) for v in r[1:]]
    return PiecewisePolyField(mesh, p, coeffs)
