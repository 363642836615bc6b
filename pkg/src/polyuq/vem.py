"""Enhanced Virtual Element discretisation of ``-div(alpha grad u) = f``.

Degrees of freedom of the order-``p`` space on an element ``E``:

* values at the vertices;
* values at the ``p - 1`` interior Gauss-Lobatto nodes of every edge;
* scaled moments ``(1/|E|) int_E v m_a`` for ``|a| <= p - 2``.

Globally the vertex DOFs come first, then edge nodes (``n_V + e (p-1) + k``,
with ``k`` counted from the lower-numbered edge vertex), then the moments
of each element.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import (_chunks, element_quadrature, eval_monomial_gradients, eval_monomials,
                    monomial_exponents, n_poly, weighted_grams, weighted_moments)
from .exceptions import CoefficientError
from .quadrature import area_centroid, gauss_lobatto, polygon_quadrature, signed_area
from .solvers import SolverInfo, pcg

__all__ = [
    "DofLayout",
    "ElementOperators",
    "element_operators",
    "VemSpace",
    "DiscreteSystem",
    "VemSolution",
    "assemble",
    "solve",
    "project_field",
    "error_norms",
    "qoi",
    "get_space",
]


class DofLayout:
    """Global numbering of the order-``p`` DOFs on a mesh."""

    def __init__(self, mesh, p):
        if int(p) != p or p < 1:
            raise ValueError(f"order p must be an integer >= 1, got {p}")
        self.mesh = mesh
        self.p = p = int(p)
        self.n_edge_nodes = p - 1
        self.n_moments = p * (p - 1) // 2
        nv, ne, nel = mesh.n_vertices, mesh.n_edges, mesh.n_elements
        self.edge_offset = nv
        self.moment_offset = nv + ne * (p - 1)
        self.n_dofs = self.moment_offset + nel * self.n_moments
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[:nv] = mesh.boundary_vertex_flags
        if p > 1:
            be = np.flatnonzero(mesh.boundary_edge_flags)
            idx = nv + be[:, None] * (p - 1) + np.arange(p - 1)
            mask[idx.ravel()] = True
        mask.setflags(write=False)
        self.dirichlet_mask = mask
        self.free_dofs = np.flatnonzero(~mask)
        self.free_dofs.setflags(write=False)
        self.n_free = len(self.free_dofs)
        self.groups = []
        self._where = np.empty((nel, 2), dtype=np.int64)
        for gi, (n, ks) in enumerate(mesh._groups):
            dofs = self._group_dofs(n, ks)
            dofs.setflags(write=False)
            self.groups.append((ks, dofs))
            self._where[ks, 0] = gi
            self._where[ks, 1] = np.arange(len(ks))

    def _group_dofs(self, n, ks):
        mesh, p = self.mesh, self.p
        verts = np.stack([mesh.elements[k] for k in ks])
        parts = [verts]
        if p > 1:
            edges = np.stack([mesh.element_edges[k] for k in ks])
            forward = verts < np.roll(verts, -1, axis=1)
            nodes = np.arange(p - 1)
            local = np.where(forward[..., None], nodes, p - 2 - nodes)      # (g, n, p-1)
            parts.append((self.edge_offset + edges[..., None] * (p - 1) + local).reshape(len(ks), -1))
            parts.append(self.moment_offset + ks[:, None] * self.n_moments
                         + np.arange(self.n_moments))
        return np.concatenate(parts, axis=1)

    def element_dofs(self, k):
        """Global indices of the local DOFs of element ``k`` in local order."""
        gi, pos = self._where[k]
        return self.groups[gi][1][pos]

    def local_size(self, k):
        return len(self.mesh.elements[k]) * self.p + self.n_moments

    def __repr__(self):
        return f"DofLayout(p={self.p}, n_dofs={self.n_dofs}, n_free={self.n_free})"


@dataclass
class ElementOperators:
    """Computable matrices of one element, in local DOF order.

    ``D`` (N_E x n_p) holds DOF values of the scaled monomials, ``B`` and
    ``G`` the energy-projection system (``G`` has the constant-fixing row
    in place), ``PiNabla_star`` and ``Pi0_star`` map DOFs to monomial
    coefficients of the energy and L2 projections, ``H`` is the monomial
    mass matrix, ``K_alpha`` the alpha-weighted monomial stiffness and
    ``A_local`` the stabilised local stiffness.
    """

    p: int
    center: np.ndarray
    diameter: float
    area: float
    D: np.ndarray
    B: np.ndarray
    G: np.ndarray
    PiNabla_star: np.ndarray
    PiNabla_dof: np.ndarray
    Pi0_star: np.ndarray
    H: np.ndarray
    stab: np.ndarray
    K_alpha: np.ndarray = None
    alpha_bar: float = None
    A_local: np.ndarray = None


def _laplacian_matrix(p, h):
    """Coefficients of Laplace(m_a) in the basis of degree ``p - 2``, shape (n_{p-2}, n_p)."""
    ex = monomial_exponents(p)
    low = {tuple(a): i for i, a in enumerate(monomial_exponents(p - 2))} if p >= 2 else {}
    L = np.zeros((n_poly(p - 2), len(ex)))
    for j, (a, b) in enumerate(ex):
        if a >= 2:
            L[low[(a - 2, b)], j] += a * (a - 1) / h ** 2
        if b >= 2:
            L[low[(a, b - 2)], j] += b * (b - 1) / h ** 2
    return L


def _projectors(xy, p):
    """Geometry-only operators of one CCW polygon (local DOF order)."""
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    area = signed_area(xy)
    center = area_centroid(xy)
    diam = float(np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1)).max())
    npol = n_poly(p)
    nm = p * (p - 1) // 2
    ndof = n * p + nm
    t, wl = gauss_lobatto(p + 1)

    quad = polygon_quadrature(xy, 2 * p)
    mq = eval_monomials((quad.points - center) / diam, p)
    H = (quad.weights[:, None] * mq).T @ mq
    H = 0.5 * (H + H.T)

    # DOF values of the monomials
    D = np.zeros((ndof, npol))
    D[:n] = eval_monomials((xy - center) / diam, p)
    # boundary node coordinates per edge: nodes t_0..t_p, t_0 = v_i, t_p = v_{i+1}
    B = np.zeros((npol, ndof))
    for i in range(n):
        a, b = xy[i], xy[(i + 1) % n]
        tangent = b - a
        length = float(np.hypot(*tangent))
        normal = np.array([tangent[1], -tangent[0]]) / length
        pts = a + t[:, None] * tangent
        if p > 1:
            D[n + i * (p - 1): n + (i + 1) * (p - 1)] = eval_monomials(
                (pts[1:-1] - center) / diam, p)
        grads = eval_monomial_gradients((pts - center) / diam, p) / diam   # (p+1, npol, 2)
        dn = grads @ normal                                               # (p+1, npol)
        node_dofs = [i] + [n + i * (p - 1) + k for k in range(p - 1)] + [(i + 1) % n]
        for j, d in enumerate(node_dofs):
            B[:, d] += wl[j] * length * dn[j]
    if nm:
        D[n * p:] = H[:nm, :] / area
        B[:, n * p:] -= area * _laplacian_matrix(p, diam).T

    G = B @ D
    if p == 1:
        perim = np.hypot(*(np.roll(xy, -1, axis=0) - xy).T)
        w_vertex = 0.5 * (perim + np.roll(perim, 1)) / perim.sum()
        fix = np.zeros(ndof)
        fix[:n] = w_vertex
    else:
        fix = np.zeros(ndof)
        fix[n * p] = 1.0
    Gt = G.copy()
    Gt[0] = fix @ D
    Bt = B.copy()
    Bt[0] = fix
    PiN = np.linalg.solve(Gt, Bt)

    if nm:
        # H^{-1} H_{:,L} is the identity on the low block, so Pi0 only corrects
        # the degree <= p-2 coefficients of PiN: well conditioned even for slivers
        Emom = np.zeros((nm, ndof))
        Emom[:, n * p:] = np.eye(nm)
        Pi0 = PiN.copy()
        Pi0[:nm] += np.linalg.solve(H[:nm, :nm], area * Emom - H[:nm, :] @ PiN)
    else:
        Pi0 = PiN.copy()

    PiN_dof = D @ PiN
    I_minus = np.eye(ndof) - PiN_dof
    stab = I_minus.T @ I_minus
    stab = 0.5 * (stab + stab.T)
    return ElementOperators(p=p, center=center, diameter=diam, area=area, D=D, B=B, G=Gt,
                            PiNabla_star=PiN, PiNabla_dof=PiN_dof, Pi0_star=Pi0, H=H,
                            stab=stab)


def _eval_coefficient(alpha, points):
    if callable(alpha):
        vals = np.asarray(alpha(points), dtype=float)
        if vals.ndim == 0:
            vals = np.full(len(points), float(vals))
    else:
        vals = np.full(len(points), float(alpha))
    if vals.shape != (len(points),):
        raise ValueError(f"coefficient returned shape {vals.shape}, expected ({len(points)},)")
    return vals


def _eval_source(f, points):
    if f is None:
        return np.zeros(len(points))
    return _eval_coefficient(f, points)


def element_operators(vertices, p, alpha=1.0):
    """All local VEM matrices of one polygon for the coefficient ``alpha``.

    ``alpha`` is a positive constant or a vectorised callable of points (n, 2).
    Raises ``CoefficientError`` if alpha is not positive at a quadrature point.
    """
    ops = _projectors(vertices, p)
    quad = polygon_quadrature(np.asarray(vertices, dtype=float), 2 * p + 2)
    a = _eval_coefficient(alpha, quad.points)
    if not np.all(a > 0):
        raise CoefficientError("diffusion coefficient is not positive at a quadrature point")
    g = eval_monomial_gradients((quad.points - ops.center) / ops.diameter, p) / ops.diameter
    K = np.einsum("q,qad,qbd->ab", quad.weights * a, g, g)
    K = 0.5 * (K + K.T)
    abar = float(quad.weights @ a) / ops.area
    P = ops.PiNabla_star
    A = P.T @ K @ P + abar * ops.stab
    ops.K_alpha = K
    ops.alpha_bar = abar
    ops.A_local = 0.5 * (A + A.T)
    return ops


def _shape_key(xy, h):
    rel = np.round((xy - xy[0]) / (1e-11 * h)).astype(np.int64)
    return (len(xy), rel.tobytes())


class VemSpace:
    """Order-``p`` enhanced VE space on a mesh with precomputed projectors.

    Use :func:`get_space` to share one instance per ``(mesh, p)``.
    """

    def __init__(self, mesh, p):
        self.mesh = mesh
        self.p = p
        self.layout = DofLayout(mesh, p)
        self.n_poly = n_poly(p)
        self.quad_degree = 2 * p + 2
        self._groups = []
        self._shape_ops = []
        self._shape_of = np.empty(mesh.n_elements, dtype=np.int64)
        rows, cols = [], []
        for ks, dofs in self.layout.groups:
            xy = mesh.vertices[np.stack([mesh.elements[k] for k in ks])]
            scale = 1e-11 * mesh.diameters[ks][:, None, None]
            keys = np.round((xy - xy[:, :1]) / scale).astype(np.int64).reshape(len(ks), -1)
            _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
            inverse = inverse.ravel()
            base = [_projectors(xy[i], p) for i in first]
            self._shape_of[ks] = len(self._shape_ops) + inverse
            self._shape_ops.extend(base)
            PiN = np.stack([o.PiNabla_star for o in base])[inverse]
            Pi0 = np.stack([o.Pi0_star for o in base])[inverse]
            S = np.stack([o.stab for o in base])[inverse]
            s = dofs.shape[1]
            self._groups.append((ks, dofs, PiN, Pi0, S))
            rows.append(np.repeat(dofs, s, axis=1).ravel())
            cols.append(np.tile(dofs, (1, s)).ravel())
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self._proj = {}
        self._quad = element_quadrature(mesh, self.quad_degree)

    @property
    def n_dofs(self):
        return self.layout.n_dofs

    @property
    def n_free(self):
        return self.layout.n_free

    def operators(self, k):
        """Geometry-only :class:`ElementOperators` of element ``k``."""
        return self._shape_ops[self._shape_of[k]]

    # -- coefficient-dependent pieces ------------------------------------
    def _monomial_stiffness(self, alpha, check=True):
        q = self._quad
        a = _eval_coefficient(alpha, q.points)
        if check and not np.all(a > 0):
            k = int(q.element[np.flatnonzero(~(a > 0))[0]])
            raise CoefficientError(
                f"diffusion coefficient is not positive on element {k} "
                f"(min value {a.min():.3e})")
        K = weighted_grams(self.mesh, self.p, self.quad_degree, a, kind="gradient")
        abar = q.element_sum(q.weights * a) / self.mesh.areas
        return K, abar

    def stiffness(self, alpha=1.0, *, allow_nonpositive=False):
        """Global stiffness on all DOFs (CSR).

        ``allow_nonpositive`` skips the positivity check; it is used to build
        the individual terms of an affine coefficient expansion.
        """
        K, abar = self._monomial_stiffness(alpha, check=not allow_nonpositive)
        vals = []
        for ks, dofs, PiN, Pi0, S in self._groups:
            A = np.einsum("gai,gab,gbj->gij", PiN, K[ks], PiN) + abar[ks, None, None] * S
            vals.append(A.ravel())
        n = self.n_dofs
        A = sp.coo_matrix((np.concatenate(vals), (self._rows, self._cols)), shape=(n, n)).tocsr()
        A.sum_duplicates()
        return A

    def moment_vector(self, f):
        """``int_E f m_a`` on every element, shape (n_elements, n_p)."""
        fv = _eval_source(f, self._quad.points)
        return weighted_moments(self.mesh, self.p, self.quad_degree, fv)

    def _scatter_pi0(self, moments):
        out = np.zeros(self.n_dofs)
        for ks, dofs, PiN, Pi0, S in self._groups:
            loc = np.einsum("gai,ga->gi", Pi0, moments[ks])
            np.add.at(out, dofs.ravel(), loc.ravel())
        return out

    def load(self, f):
        """Load vector ``int (Pi0 f) (Pi0 v)`` on all DOFs."""
        return self._scatter_pi0(self.moment_vector(f))

    def qoi_vector(self, q):
        """Vector ``g`` with ``Q_h(v) = g . v`` for ``Q_h(v) = int (Pi0 q)(Pi0 v)``."""
        return self._scatter_pi0(self.moment_vector(q))

    def projection_matrix(self, which="energy"):
        """Sparse map from global DOFs to stacked per-element monomial coefficients."""
        if which not in ("energy", "l2"):
            raise ValueError(f"projection must be 'energy' or 'l2', got {which!r}")
        M = self._proj.get(which)
        if M is None:
            npol = self.n_poly
            rows, cols, vals = [], [], []
            for ks, dofs, PiN, Pi0, S in self._groups:
                P = PiN if which == "energy" else Pi0
                s = dofs.shape[1]
                r = (ks[:, None, None] * npol + np.arange(npol)[None, :, None])
                rows.append(np.broadcast_to(r, (len(ks), npol, s)).ravel())
                cols.append(np.broadcast_to(dofs[:, None, :], (len(ks), npol, s)).ravel())
                vals.append(P.ravel())
            M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self.mesh.n_elements * npol, self.n_dofs))
            self._proj[which] = M
        return M

    def project(self, dofs, which="energy"):
        """Per-element coefficients (n_elements, n_p) of a projected DOF vector."""
        c = self.projection_matrix(which) @ np.asarray(dofs, dtype=float)
        return c.reshape(self.mesh.n_elements, self.n_poly)

    def interpolate(self, u):
        """DOF vector of the VE interpolant of a vectorised function ``u``."""
        mesh, p, lay = self.mesh, self.p, self.layout
        out = np.zeros(self.n_dofs)
        out[:mesh.n_vertices] = _eval_source(u, mesh.vertices)
        if p > 1:
            t = gauss_lobatto(p + 1)[0][1:-1]
            a = mesh.vertices[mesh.edges[:, 0]]
            b = mesh.vertices[mesh.edges[:, 1]]
            pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
            out[lay.edge_offset:lay.moment_offset] = _eval_source(u, pts.reshape(-1, 2))
            nm = lay.n_moments
            mom = self.moment_vector(u)[:, :nm] / mesh.areas[:, None]
            out[lay.moment_offset:] = mom.ravel()
        return out

    def __repr__(self):
        return f"VemSpace(p={self.p}, n_dofs={self.n_dofs}, n_free={self.n_free})"


def get_space(mesh, p):
    """Cached :class:`VemSpace` for ``(mesh, p)``."""
    key = ("vem_space", int(p))
    space = mesh._cache.get(key)
    if space is None:
        space = VemSpace(mesh, p)
        mesh._cache[key] = space
    return space


class DiscreteSystem:
    """Reduced linear system on the free DOFs; unpacks as ``(matrix, rhs, layout)``."""

    def __init__(self, space, matrix, rhs, lift):
        self.space = space
        self.matrix = matrix
        self.rhs = rhs
        self.lift = lift

    @property
    def layout(self):
        return self.space.layout

    def __iter__(self):
        return iter((self.matrix, self.rhs, self.layout))


@dataclass
class VemSolution:
    """DOF vector on all DOFs (boundary values included) with solver diagnostics."""

    space: VemSpace
    dofs: np.ndarray
    info: SolverInfo = None

    @property
    def mesh(self):
        return self.space.mesh

    @property
    def p(self):
        return self.space.p


def assemble(mesh, p, alpha=1.0, f=None, boundary_values=None):
    """Assemble the Dirichlet problem and eliminate the boundary DOFs.

    Parameters
    ----------
    alpha : float or callable
        Diffusion coefficient.
    f : callable or float, optional
        Source term; ``None`` means zero.
    boundary_values : callable, optional
        Boundary data ``g``; its interpolant is lifted to the right-hand side.
        Homogeneous data by default.
    """
    space = get_space(mesh, p)
    A = space.stiffness(alpha)
    F = space.load(f)
    lay = space.layout
    free = lay.free_dofs
    lift = np.zeros(space.n_dofs)
    if boundary_values is not None:
        lift[lay.dirichlet_mask] = space.interpolate(boundary_values)[lay.dirichlet_mask]
        F = F - A @ lift
    A_ff = A[free][:, free].tocsr()
    return DiscreteSystem(space, A_ff, F[free], lift)


def _extended_residual(A, x, b):
    """``b - A x`` accumulated in extended precision, rounded to double."""
    ld = np.longdouble
    prod = A.data.astype(ld) * x.astype(ld)[A.indices]
    nonempty = np.diff(A.indptr) > 0
    Ax = np.zeros(A.shape[0], dtype=ld)
    Ax[nonempty] = np.add.reduceat(prod, A.indptr[:-1][nonempty])
    return (b.astype(ld) - Ax).astype(float)


def _direct_solve(A, b, refinement_steps=2):
    """Sparse LU with mixed-precision iterative refinement."""
    if len(b) == 0:
        return np.zeros(0), SolverInfo(0, 0.0, True, [])
    A = A.tocsr()
    lu = spla.splu(A.tocsc())
    x = lu.solve(b)
    bn = float(np.linalg.norm(b))
    history = []
    for _ in range(refinement_steps):
        r = _extended_residual(A, x, b)
        history.append(float(np.linalg.norm(r)) / bn if bn > 0 else 0.0)
        x = x + lu.solve(r)
    r = _extended_residual(A, x, b)
    res = float(np.linalg.norm(r)) / bn if bn > 0 else 0.0
    history.append(res)
    return x, SolverInfo(1, res, True, history)


def solve(system, rel_tol=1e-10, max_iter=None, method="cg"):
    """Solve a :class:`DiscreteSystem`.

    ``method='cg'`` (default) runs Jacobi-preconditioned CG to relative
    residual ``rel_tol``. ``method='direct'`` uses a sparse LU factorisation,
    which is faster for the large single solves of deterministic
    convergence studies; the residual is still reported.
    """
    if method == "cg":
        x, info = pcg(system.matrix, system.rhs, rel_tol=rel_tol, max_iter=max_iter)
    elif method == "direct":
        x, info = _direct_solve(system.matrix, system.rhs)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    dofs = system.lift.copy()
    dofs[system.layout.free_dofs] = x
    return VemSolution(system.space, dofs, info)


def project_field(solution, which="energy"):
    """Energy (``'energy'``) or L2 (``'l2'``) projection as a piecewise polynomial field."""
    from .fields import PiecewisePolyField
    return PiecewisePolyField(solution.mesh, solution.p,
                              solution.space.project(solution.dofs, which))


def error_norms(solution, exact_value, exact_gradient):
    """Broken H1-seminorm error of the energy projection and L2 error of the L2 projection."""
    space = solution.space
    mesh, p = space.mesh, space.p
    q = space._quad
    npol = space.n_poly
    cN = space.project(solution.dofs, "energy")
    c0 = space.project(solution.dofs, "l2")
    ge = np.asarray(exact_gradient(q.points), dtype=float).reshape(-1, 2)
    ue = _eval_source(exact_value, q.points)
    e1 = np.zeros(mesh.n_elements)
    e0 = np.zeros(mesh.n_elements)
    for kc, idx in _chunks(mesh, q):
        c, npe = idx.shape
        xi = q.scaled[idx].reshape(-1, 2)
        g = eval_monomial_gradients(xi, p).reshape(c, npe, npol, 2)
        g = g / mesh.diameters[kc][:, None, None, None]
        m = eval_monomials(xi, p).reshape(c, npe, npol)
        grad_h = np.einsum("cqad,ca->cqd", g, cN[kc])
        val_h = np.einsum("cqa,ca->cq", m, c0[kc])
        w = q.weights[idx]
        e1[kc] = (w * ((ge[idx] - grad_h) ** 2).sum(axis=2)).sum(axis=1)
        e0[kc] = (w * (ue[idx] - val_h) ** 2).sum(axis=1)
    return float(np.sqrt(e1.sum())), float(np.sqrt(e0.sum()))


def qoi(solution_or_field, q=1.0):
    """Computable quantity of interest ``Q_h(v) = int (Pi0 q)(Pi0 v)``.

    Accepts a :class:`VemSolution` (its L2 projection is used) or a
    piecewise polynomial field (taken as that projection).
    """
    from .fields import PiecewisePolyField
    if isinstance(solution_or_field, PiecewisePolyField):
        fld = solution_or_field
        moments = fld.moment_vector(q)
        return float((moments * fld.coeffs).sum())
    sol = solution_or_field
    return float(sol.space.qoi_vector(q) @ sol.dofs)
