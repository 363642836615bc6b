"""Polygonal meshes, nested hierarchies and mesh file I/O."""
import math
import warnings
from pathlib import Path

import numpy as np

from .exceptions import GeometryError, MeshFormatError, MeshTopologyError
from .quadrature import area_centroid, fan_triangles, signed_area

__all__ = [
    "PolygonalMesh",
    "MeshHierarchy",
    "MeshQualityWarning",
    "MeshOrientationWarning",
    "cartesian_mesh",
    "build_cartesian_hierarchy",
    "refine_uniform",
    "build_refined_hierarchy",
    "load_mesh",
    "write_mesh",
    "voronoi_mesh",
    "merge_vertices",
]


class MeshQualityWarning(UserWarning):
    """An element violates the configured shape-regularity bound."""


class MeshOrientationWarning(UserWarning):
    """A clockwise element was reoriented while loading."""


def _readonly(a):
    a.setflags(write=False)
    return a


def _orient(a, b, c):
    return ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
            - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))


def _self_intersecting(xy):
    """Flag polygons whose boundary crosses itself, for a group ``xy`` (g, n, 2)."""
    g, n, _ = xy.shape
    bad = np.zeros(g, dtype=bool)
    nxt = np.roll(xy, -1, axis=1)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            p1, p2, q1, q2 = xy[:, i], nxt[:, i], xy[:, j], nxt[:, j]
            d1 = _orient(q1, q2, p1)
            d2 = _orient(q1, q2, p2)
            d3 = _orient(p1, p2, q1)
            d4 = _orient(p1, p2, q2)
            bad |= (d1 * d2 <= 0) & (d3 * d4 <= 0)
    return bad


class PolygonalMesh:
    """Conforming mesh of simple counterclockwise polygons.

    Parameters
    ----------
    vertices : array-like, shape (n_vertices, 2)
    elements : sequence of int sequences
        Counterclockwise vertex loops, 0-based.
    min_vertex_ratio : float
        Shape-regularity bound ``c``: vertices of an element should be at least
        ``c * h_E`` apart. Violations are reported with ``MeshQualityWarning``.
    check_simple : bool
        Run the O(n_E^2) self-intersection test on every element.
    """

    def __init__(self, vertices, elements, *, min_vertex_ratio=1e-3, check_simple=True):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError(f"vertices must have shape (n, 2), got {vertices.shape}")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("vertex coordinates must be finite")
        self.vertices = _readonly(vertices)
        if isinstance(elements, np.ndarray) and elements.ndim == 2:
            arr = elements.astype(np.int64)
            elems = [_readonly(row) for row in arr.copy()]
        else:
            elems = [_readonly(np.array(e, dtype=np.int64)) for e in elements]
        if not elems:
            raise MeshTopologyError("mesh has no elements")
        for k, e in enumerate(elems):
            if e.ndim != 1 or len(e) < 3:
                raise MeshTopologyError(f"element {k} has fewer than 3 vertices", element=k)
        self.elements = tuple(elems)
        self.min_vertex_ratio = float(min_vertex_ratio)
        self._cache = {}
        sizes = np.array([len(e) for e in elems])
        self._groups = [(n, np.flatnonzero(sizes == n)) for n in np.unique(sizes)]
        flat = np.concatenate(elems)
        if flat.min() < 0 or flat.max() >= len(vertices):
            k = int(np.repeat(np.arange(len(elems)), sizes)[
                np.flatnonzero((flat < 0) | (flat >= len(vertices)))[0]])
            raise MeshTopologyError(f"element {k} references a missing vertex", element=k)
        for n, ks in self._groups:
            idx = np.stack([elems[k] for k in ks])
            s = np.sort(idx, axis=1)
            dup = (s[:, 1:] == s[:, :-1]).any(axis=1)
            if dup.any():
                k = int(ks[np.flatnonzero(dup)[0]])
                raise MeshTopologyError(f"element {k} repeats a vertex", element=k)
        self._build_topology(sizes)
        self._build_geometry(check_simple)

    # -- construction -----------------------------------------------------
    def _build_topology(self, sizes):
        nel = len(self.elements)
        nv = len(self.vertices)
        a = np.concatenate(self.elements)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        owner = np.repeat(np.arange(nel), sizes)
        local = np.arange(len(a)) - offsets[owner]
        nxt = local + 1
        nxt[nxt == sizes[owner]] = 0
        b = a[offsets[owner] + nxt]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = lo * nv + hi
        uniq, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True,
                                                 return_counts=True)
        inverse = inverse.ravel()
        if counts.max() > 2:
            e = int(np.flatnonzero(counts > 2)[0])
            key = (int(lo[first[e]]), int(hi[first[e]]))
            sharing = sorted(set(owner[inverse == e].tolist()))
            raise MeshTopologyError(
                f"edge {key} is shared by {counts[e]} elements {sharing}", edge=key)
        n_edges = len(uniq)
        # first and second element of every edge, in element order
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)])
        ee = np.full((n_edges, 2), -1, dtype=np.int64)
        ee[:, 0] = owner[order[starts[:-1]]]
        two = counts == 2
        ee[two, 1] = owner[order[starts[:-1][two] + 1]]
        forward = a < b
        fwd_sorted = forward[order]
        same_dir = two & (fwd_sorted[starts[:-1]] == fwd_sorted[np.minimum(starts[:-1] + 1,
                                                                           len(order) - 1)])
        if same_dir.any():
            e = int(np.flatnonzero(same_dir)[0])
            key = (int(lo[first[e]]), int(hi[first[e]]))
            raise MeshTopologyError(
                f"edge {key} is traversed in the same direction by elements "
                f"{ee[e].tolist()} (inconsistent orientation)", edge=key)
        edges = np.column_stack([lo[first], hi[first]])
        self.edges = _readonly(edges)
        self.edge_elements = _readonly(ee)
        self.element_edges = tuple(_readonly(inverse[offsets[k]:offsets[k + 1]].copy())
                                   for k in range(nel))
        self.boundary_edge_flags = _readonly(ee[:, 1] < 0)
        bv = np.zeros(nv, dtype=bool)
        bv[edges[self.boundary_edge_flags].ravel()] = True
        self.boundary_vertex_flags = _readonly(bv)

    def _build_geometry(self, check_simple):
        n_el = len(self.elements)
        areas = np.empty(n_el)
        centroids = np.empty((n_el, 2))
        diameters = np.empty(n_el)
        min_ratio = np.empty(n_el)
        for n, ks in self._groups:
            idx = np.stack([self.elements[k] for k in ks])
            xy = self.vertices[idx]                      # (g, n, 2)
            origin = xy[:, :1, :]
            rel = xy - origin
            x, y = rel[..., 0], rel[..., 1]
            xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
            cross = x * yn - xn * y
            a = 0.5 * cross.sum(axis=1)
            nonpos = ~(a > 0)
            if nonpos.any():
                g = int(np.flatnonzero(nonpos)[0])
                raise GeometryError(
                    f"non-positive signed area {a[g]:.3e} (clockwise or degenerate)",
                    element=int(ks[g]))
            if check_simple and n > 3:
                bad = _self_intersecting(xy)
                if bad.any():
                    raise GeometryError("vertex loop self-intersects",
                                        element=int(ks[np.flatnonzero(bad)[0]]))
            cx = ((x + xn) * cross).sum(axis=1) / (6.0 * a)
            cy = ((y + yn) * cross).sum(axis=1) / (6.0 * a)
            d = np.sqrt(((xy[:, :, None, :] - xy[:, None, :, :]) ** 2).sum(-1))
            iu = np.triu_indices(n, 1)
            pair = d[:, iu[0], iu[1]]
            areas[ks] = a
            centroids[ks] = np.column_stack([cx, cy]) + origin[:, 0, :]
            diameters[ks] = pair.max(axis=1)
            min_ratio[ks] = pair.min(axis=1) / diameters[ks]
        self.areas = _readonly(areas)
        self.centroids = _readonly(centroids)
        self.diameters = _readonly(diameters)
        self.vertex_distance_ratios = _readonly(min_ratio)
        bad = np.flatnonzero(min_ratio < self.min_vertex_ratio)
        if len(bad):
            warnings.warn(
                f"{len(bad)} element(s) have vertices closer than "
                f"{self.min_vertex_ratio:g} * h_E (first: element {bad[0]}, "
                f"ratio {min_ratio[bad[0]]:.2e})", MeshQualityWarning, stacklevel=3)

    # -- properties -------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def h(self):
        """Mesh size: the largest element diameter."""
        return float(self.diameters.max())

    @property
    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def domain_diameter(self):
        lo, hi = self.bounding_box
        return float(np.hypot(*(hi - lo)))

    def element_vertices(self, k):
        return self.vertices[self.elements[k]]

    def shape_report(self):
        """Shape-regularity diagnostics."""
        return {
            "n_elements": self.n_elements,
            "h": self.h,
            "min_vertex_distance_ratio": float(self.vertex_distance_ratios.min()),
            "min_vertex_ratio_bound": self.min_vertex_ratio,
            "max_vertices_per_element": max(len(e) for e in self.elements),
        }

    def __repr__(self):
        return (f"PolygonalMesh(n_vertices={self.n_vertices}, n_elements={self.n_elements}, "
                f"h={self.h:.4g})")


class MeshHierarchy:
    """Nested meshes ``T_1, ..., T_L`` (finest last) with parent maps.

    Levels are numbered from 1. ``parent_maps[i]`` maps elements of level
    ``i + 2`` to their parents in level ``i + 1``.
    """

    def __init__(self, meshes, parent_maps, *, check=True):
        meshes = list(meshes)
        parent_maps = [np.asarray(m, dtype=np.int64) for m in parent_maps]
        if not meshes:
            raise ValueError("a hierarchy needs at least one mesh")
        if len(parent_maps) != len(meshes) - 1:
            raise ValueError("need one parent map per refinement step")
        for a in parent_maps:
            a.setflags(write=False)
        self.meshes = tuple(meshes)
        self.parent_maps = tuple(parent_maps)
        self._cache = {}
        if check:
            self.check_nesting()

    @property
    def n_levels(self):
        return len(self.meshes)

    def mesh(self, level):
        self._check_level(level)
        return self.meshes[level - 1]

    def parent_map(self, level):
        """Map from elements of ``level`` to elements of ``level - 1``."""
        self._check_level(level)
        if level == 1:
            raise ValueError("level 1 has no parent level")
        return self.parent_maps[level - 2]

    @property
    def level_sizes(self):
        return np.array([m.h for m in self.meshes])

    def ancestor_map(self, level, coarse_level):
        """Map from elements of ``level`` to their ancestors in ``coarse_level``."""
        self._check_level(level)
        self._check_level(coarse_level)
        if coarse_level > level:
            raise ValueError(f"coarse level {coarse_level} is finer than level {level}")
        amap = np.arange(self.mesh(level).n_elements)
        for lev in range(level, coarse_level, -1):
            amap = self.parent_map(lev)[amap]
        return amap

    def dof_count(self, level, p):
        """Dimension of the order-``p`` space with homogeneous Dirichlet data."""
        from .vem import DofLayout
        return DofLayout(self.mesh(level), p).n_free

    def level_of(self, mesh):
        for i, m in enumerate(self.meshes):
            if m is mesh:
                return i + 1
        raise ValueError("mesh is not part of this hierarchy")

    def check_nesting(self, rtol=1e-12):
        for i, pm in enumerate(self.parent_maps):
            coarse, fine = self.meshes[i], self.meshes[i + 1]
            if len(pm) != fine.n_elements:
                raise MeshTopologyError(f"parent map {i + 2} is not total")
            if pm.min() < 0 or pm.max() >= coarse.n_elements:
                raise MeshTopologyError(f"parent map {i + 2} points outside level {i + 1}")
            child_area = np.bincount(pm, weights=fine.areas, minlength=coarse.n_elements)
            if np.any(child_area == 0):
                raise MeshTopologyError(f"parent map {i + 2} is not surjective")
            err = np.abs(child_area - coarse.areas) / coarse.areas
            if err.max() > rtol:
                k = int(err.argmax())
                raise MeshTopologyError(
                    f"children of level-{i + 1} element {k} cover area "
                    f"{child_area[k]:.15g}, parent has {coarse.areas[k]:.15g}", element=k)
            from matplotlib.path import Path as MplPath
            for k in range(coarse.n_elements):
                kids = np.flatnonzero(pm == k)
                path = MplPath(coarse.element_vertices(k))
                if not path.contains_points(fine.centroids[kids]).all():
                    raise MeshTopologyError(
                        f"a child of level-{i + 1} element {k} lies outside it", element=k)

    def _check_level(self, level):
        if not 1 <= level <= self.n_levels:
            raise ValueError(f"level must be in 1..{self.n_levels}, got {level}")

    def __repr__(self):
        return f"MeshHierarchy(levels={self.n_levels}, h={np.round(self.level_sizes, 5).tolist()})"


def _grid_coordinates(n, domain, grading):
    (x0, x1), (y0, y1) = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate domain {domain}")
    s = np.arange(n + 1) / n
    t = s.copy()
    if grading is not None:
        gx, gy = grading
        s, t = np.asarray(gx(s), float), np.asarray(gy(t), float)
        if np.any(np.diff(s) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("grading maps must be strictly increasing")
    return x0 + (x1 - x0) * s, y0 + (y1 - y0) * t


def _tensor_mesh(xs, ys):
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([v00, v00 + 1, v00 + nx + 2, v00 + nx + 1])
    return PolygonalMesh(vertices, elements, check_simple=False)


def cartesian_mesh(nx, ny=None, domain=((0.0, 1.0), (0.0, 1.0)), grading=None):
    """Tensor-product mesh of ``nx * ny`` rectangles.

    ``grading`` is an optional pair of increasing maps of [0, 1] onto itself
    applied to the normalised x and y grid coordinates.
    """
    ny = nx if ny is None else ny
    xs, _ = _grid_coordinates(nx, domain, grading)
    _, ys = _grid_coordinates(ny, domain, grading)
    return _tensor_mesh(xs, ys)


def _cartesian_parent_map(n_coarse, n_fine):
    r = n_fine // n_coarse
    i, j = np.meshgrid(np.arange(n_fine), np.arange(n_fine))
    return ((j // r) * n_coarse + i // r).ravel()


def build_cartesian_hierarchy(L, n0=1, domain=((0.0, 1.0), (0.0, 1.0)), grading=None,
                              index_dtype=np.int32):
    """Nested Cartesian hierarchy; level ``l`` has ``n0 * 2**(l-1)`` cells per side."""
    if L < 1 or n0 < 1:
        raise ValueError(f"need L >= 1 and n0 >= 1, got L={L}, n0={n0}")
    n_fine = n0 * 2 ** (L - 1)
    if (n_fine + 1) ** 2 > np.iinfo(index_dtype).max:
        raise OverflowError(
            f"L={L} gives {(n_fine + 1) ** 2} vertices, beyond the {np.dtype(index_dtype)} index range")
    sizes = [n0 * 2 ** (lev - 1) for lev in range(1, L + 1)]
    # coarse grids are subsampled from the finest one so shared vertices coincide exactly
    xs, ys = _grid_coordinates(n_fine, domain, grading)
    meshes = [_tensor_mesh(xs[::n_fine // n], ys[::n_fine // n]) for n in sizes]
    parents = [_cartesian_parent_map(sizes[i], sizes[i + 1]) for i in range(L - 1)]
    return MeshHierarchy(meshes, parents)


def refine_uniform(mesh):
    """Split every polygon into quadrilaterals through its centroid and edge midpoints.

    Returns ``(fine_mesh, parent_map)``. Child ``i`` of an element is the
    quadrilateral at its ``i``-th vertex.
    """
    nv, ne = mesh.n_vertices, mesh.n_edges
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids, mesh.centroids])
    elements = []
    parents = []
    for k, e in enumerate(mesh.elements):
        try:
            fan_triangles(mesh.vertices[e], mesh.centroids[k])
        except GeometryError as exc:
            raise GeometryError(f"cannot refine: {exc}", element=k) from None
        n = len(e)
        edges = mesh.element_edges[k]
        c = nv + ne + k
        for i in range(n):
            elements.append([int(e[i]), nv + int(edges[i]), c, nv + int(edges[i - 1])])
            parents.append(k)
    fine = PolygonalMesh(vertices, elements, min_vertex_ratio=mesh.min_vertex_ratio,
                         check_simple=False)
    return fine, np.array(parents, dtype=np.int64)


def build_refined_hierarchy(coarse, L):
    """Hierarchy of ``L`` levels obtained by repeated ``refine_uniform``."""
    meshes, parents = [coarse], []
    for _ in range(L - 1):
        fine, pm = refine_uniform(meshes[-1])
        meshes.append(fine)
        parents.append(pm)
    return MeshHierarchy(meshes, parents)


def merge_vertices(points, tol):
    """Merge points closer than about ``tol``; returns ``(unique_points, index_map)``."""
    points = np.asarray(points, dtype=float)
    keys = np.round(points / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return points[first], inverse.ravel()


def load_mesh(path, **kwargs):
    """Read a mesh in the ``polymesh 1`` text format.

    Clockwise elements are reoriented with a ``MeshOrientationWarning``.
    """
    lines = Path(path).read_text().splitlines()
    items = []
    for no, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if s:
            items.append((no, s))
    if not items:
        raise MeshFormatError("empty mesh file", 1)
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(items):
            last = items[-1][0] if items else 1
            raise MeshFormatError("unexpected end of file", last + 1)
        item = items[pos]
        pos += 1
        return item

    no, s = take()
    if s.split() != ["polymesh", "1"]:
        raise MeshFormatError(f"expected header 'polymesh 1', got {s!r}", no)

    def count(tag):
        no, s = take()
        parts = s.split()
        if len(parts) != 2 or parts[0] != tag:
            raise MeshFormatError(f"expected '{tag} <count>', got {s!r}", no)
        try:
            n = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"invalid count {parts[1]!r}", no) from None
        if n < 0:
            raise MeshFormatError(f"negative count {n}", no)
        return n

    nv = count("V")
    vertices = np.empty((nv, 2))
    for i in range(nv):
        no, s = take()
        parts = s.split()
        if len(parts) != 2:
            raise MeshFormatError(f"expected 'x y', got {s!r}", no)
        try:
            vertices[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError(f"invalid coordinates {s!r}", no) from None
    ne = count("E")
    elements = []
    for k in range(ne):
        no, s = take()
        try:
            e = [int(t) for t in s.split()]
        except ValueError:
            raise MeshFormatError(f"invalid vertex index list {s!r}", no) from None
        if len(e) < 3:
            raise MeshFormatError(f"element {k} has fewer than 3 vertices", no)
        if min(e) < 0 or max(e) >= nv:
            raise MeshFormatError(f"element {k} references a vertex outside 0..{nv - 1}", no)
        if signed_area(vertices[e]) < 0:
            warnings.warn(f"element {k} (line {no}) is clockwise; reoriented",
                          MeshOrientationWarning, stacklevel=2)
            e = e[::-1]
        elements.append(e)
    if pos != len(items):
        raise MeshFormatError("trailing content after elements", items[pos][0])
    return PolygonalMesh(vertices, elements, **kwargs)


def write_mesh(mesh, path):
    """Write ``mesh`` in the ``polymesh 1`` format with round-trip exact coordinates."""
    out = ["polymesh 1", f"V {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"E {mesh.n_elements}")
    out += [" ".join(str(int(i)) for i in e) for e in mesh.elements]
    Path(path).write_text("\n".join(out) + "\n")


def voronoi_mesh(n_seeds, seed=0, lloyd_iterations=30, domain=((0.0, 1.0), (0.0, 1.0))):
    """Centroidal-ish Voronoi mesh of a rectangle.

    Seeds are mirrored across the four sides so every cell of an original
    seed is bounded and clipped exactly by the rectangle.
    """
    from scipy.spatial import Voronoi

    (x0, x1), (y0, y1) = domain
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(x0, x1, n_seeds), rng.uniform(y0, y1, n_seeds)])
    diam = math.hypot(x1 - x0, y1 - y0)
    tol = 1e-12 * diam

    def cells(pts):
        mirrored = [pts,
                    np.column_stack([2 * x0 - pts[:, 0], pts[:, 1]]),
                    np.column_stack([2 * x1 - pts[:, 0], pts[:, 1]]),
                    np.column_stack([pts[:, 0], 2 * y0 - pts[:, 1]]),
                    np.column_stack([pts[:, 0], 2 * y1 - pts[:, 1]])]
        vor = Voronoi(np.vstack(mirrored))
        verts = vor.vertices.copy()
        for col, lo, hi in ((0, x0, x1), (1, y0, y1)):
            verts[np.abs(verts[:, col] - lo) < 1e-9 * diam, col] = lo
            verts[np.abs(verts[:, col] - hi) < 1e-9 * diam, col] = hi
        loops = []
        for i in range(len(pts)):
            region = vor.regions[vor.point_region[i]]
            loop = np.array(region, dtype=np.int64)
            if signed_area(verts[loop]) < 0:
                loop = loop[::-1]
            loops.append(loop)
        return verts, loops

    for _ in range(lloyd_iterations):
        verts, loops = cells(pts)
        pts = np.array([area_centroid(verts[lp]) for lp in loops])
    verts, loops = cells(pts)
    used = np.unique(np.concatenate(loops))
    merged, imap = merge_vertices(verts[used], tol)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = imap
    elements = []
    for lp in loops:
        e = remap[lp]
        # drop consecutive duplicates produced by merging
        keep = e != np.roll(e, 1)
        elements.append(e[keep])
    return PolygonalMesh(merged, elements)
