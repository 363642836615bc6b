"""Built-in stochastic and deterministic test problems."""
from dataclasses import dataclass, field

import numpy as np

from .geometry import PolygonalMesh, build_refined_hierarchy, merge_vertices
from .stochastic import (DeterministicCoefficient, PiecewiseRegionCoefficient,
                         smooth_kl_benchmark)

__all__ = [
    "StochasticProblem",
    "ExactSolution",
    "smooth_coefficient_problem",
    "deterministic_problem",
    "sine_exact_solution",
    "polynomial_exact_solution",
    "strata_geometry",
    "strata_problem",
    "strata_hierarchy",
    "REGION_REGIMES",
]


@dataclass
class StochasticProblem:
    """``-div(alpha(omega) grad u) = f`` on ``domain`` with ``u = 0`` on the boundary.

    ``qoi_weight`` is the weight ``q`` of the linear functional ``Q(u) = int q u``.
    """

    coefficient: object
    source: object = 1.0
    qoi_weight: object = 1.0
    domain: tuple = ((0.0, 1.0), (0.0, 1.0))
    name: str = "problem"
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExactSolution:
    value: object
    gradient: object
    source: object
    qoi: float


def smooth_coefficient_problem():
    """Unit square, smooth one-mode coefficient, forcing 1, QoI ``int u``."""
    return StochasticProblem(smooth_kl_benchmark(), source=1.0, qoi_weight=1.0,
                             name="smooth-kl")


def sine_exact_solution(k=4.0):
    """``u = sin(k pi x) sin(k pi y)`` for ``alpha = 1``; ``int u = 0`` for even ``k``."""
    w = k * np.pi

    def value(x):
        return np.sin(w * x[:, 0]) * np.sin(w * x[:, 1])

    def gradient(x):
        return w * np.column_stack([np.cos(w * x[:, 0]) * np.sin(w * x[:, 1]),
                                    np.sin(w * x[:, 0]) * np.cos(w * x[:, 1])])

    def source(x):
        return 2 * w ** 2 * value(x)

    q = (2.0 / w * np.sin(w / 2) ** 2) ** 2     # (int_0^1 sin(w t) dt)^2
    return ExactSolution(value, gradient, source, float(q))


def polynomial_exact_solution(coeffs):
    """Polynomial ``u = sum c_ab x^a y^b`` (harmonic for a zero source with alpha = 1 only if so).

    ``coeffs`` maps ``(a, b)`` to ``c_ab``. The source is ``-Laplace u``.
    """
    items = [(int(a), int(b), float(c)) for (a, b), c in coeffs.items()]

    def value(x):
        return sum(c * x[:, 0] ** a * x[:, 1] ** b for a, b, c in items) + 0 * x[:, 0]

    def gradient(x):
        gx = sum(c * a * x[:, 0] ** max(a - 1, 0) * x[:, 1] ** b for a, b, c in items if a) + 0 * x[:, 0]
        gy = sum(c * b * x[:, 0] ** a * x[:, 1] ** max(b - 1, 0) for a, b, c in items if b) + 0 * x[:, 0]
        return np.column_stack([gx, gy])

    def source(x):
        lap = 0 * x[:, 0]
        for a, b, c in items:
            if a >= 2:
                lap = lap + c * a * (a - 1) * x[:, 0] ** (a - 2) * x[:, 1] ** b
            if b >= 2:
                lap = lap + c * b * (b - 1) * x[:, 0] ** a * x[:, 1] ** (b - 2)
        return -lap

    q = sum(c / ((a + 1) * (b + 1)) for a, b, c in items)
    return ExactSolution(value, gradient, source, float(q))


def deterministic_problem(alpha=1.0, source=1.0, qoi_weight=1.0, alpha_range=(1.0, 1.0)):
    """Problem with a fixed coefficient, for zero-variance checks."""
    return StochasticProblem(DeterministicCoefficient(alpha, alpha_range), source, qoi_weight,
                             name="deterministic")


# -- layered rectangle with seven strata --------------------------------------------

REGION_REGIMES = {
    "uniform": [(1.0, 10.0)] * 7,
    "heterogeneous": [(1.0, 2.0)] * 6 + [(1.0, 100.0)],
}


def _interfaces(xs, amplitude, n_layers):
    ys = [np.zeros_like(xs)]
    for k in range(1, n_layers):
        ys.append(k / n_layers + amplitude * np.sin(0.5 * np.pi * xs + 1.3 * k))
    ys.append(np.ones_like(xs))
    return ys


def strata_geometry(length=4.0, n_layers=7, spacing=0.25, amplitude=0.035):
    """Region polygons and a region-conforming coarse mesh of ``(0, length) x (0, 1)``.

    The strata are bounded by undulating interfaces sampled every
    ``spacing``. Even layers are split into quadrilateral columns one spacing
    wide, odd layers into hexagons two spacings wide, so the coarse mesh mixes
    element types while staying conforming across interfaces.

    Returns ``(regions, mesh)``; ``regions[r]`` is the polygon of stratum ``r``
    (bottom to top).
    """
    n = int(round(length / spacing))
    if n % 2:
        raise ValueError("length / spacing must be even")
    xs = np.linspace(0.0, length, n + 1)
    ys = _interfaces(xs, amplitude, n_layers)
    if np.any(np.diff(np.array(ys), axis=0) <= 0):
        raise ValueError("strata interfaces cross; reduce the amplitude")
    regions = []
    for k in range(n_layers):
        bottom = np.column_stack([xs, ys[k]])
        top = np.column_stack([xs, ys[k + 1]])[::-1]
        regions.append(np.vstack([bottom, top]))
    pts = np.array([(x, y[i]) for y in ys for i, x in enumerate(xs)])
    index = {}
    coords, imap = merge_vertices(pts, 1e-12 * np.hypot(length, 1.0))
    for li in range(n_layers + 1):
        for i in range(n + 1):
            index[(li, i)] = int(imap[li * (n + 1) + i])
    elements = []
    for k in range(n_layers):
        step = 1 if k % 2 == 0 else 2
        for i in range(0, n, step):
            cols = list(range(i, i + step + 1))
            bottom = [index[(k, c)] for c in cols]
            top = [index[(k + 1, c)] for c in reversed(cols)]
            elements.append(bottom + top)
    return regions, PolygonalMesh(coords, elements)


def strata_problem(regime="uniform", ranges=None, **geometry):
    """Seven-strata problem with forcing 1 and the domain average as QoI."""
    regions, _ = strata_geometry(**geometry)
    if ranges is None:
        if regime not in REGION_REGIMES:
            raise ValueError(f"unknown regime {regime!r}; choose from {sorted(REGION_REGIMES)}")
        ranges = REGION_REGIMES[regime]
    length = geometry.get("length", 4.0)
    return StochasticProblem(PiecewiseRegionCoefficient(regions, ranges), source=1.0,
                             qoi_weight=1.0 / length, domain=((0.0, length), (0.0, 1.0)),
                             name=f"strata-{regime}")


def strata_hierarchy(n_levels=4, **geometry):
    """Nested hierarchy obtained by refining the coarse strata mesh."""
    _, coarse = strata_geometry(**geometry)
    return build_refined_hierarchy(coarse, n_levels)
