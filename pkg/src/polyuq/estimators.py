"""Monte Carlo and multilevel Monte Carlo virtual element estimators.

Both estimators share one level kernel: draw a batch of coefficient
parameters from a keyed stream, solve the affine systems on one or two
hierarchy levels, project, re-expand on the finest level and accumulate.
Batches have a size that depends only on the problem size, and batch results
are merged in sample order, so results do not depend on the thread count.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from ._validation import check_choice, check_counts, check_int, check_positive
from .exceptions import CoefficientError
from .fields import PiecewisePolyField, broken_h1_squared, restriction_matrix
from .geometry import MeshHierarchy
from .solvers import pcg_batch
from .stochastic import SampleStream
from .vem import assemble, get_space, project_field, qoi, solve

__all__ = [
    "SampleAllocation",
    "EstimatorResult",
    "AffineLevelSystem",
    "level_system",
    "mc_sample_count",
    "mlmc_sample_counts",
    "mc_estimate",
    "mlmc_estimate",
    "estimate_error",
    "bootstrap_moment_ratio",
    "matched_cost_error",
    "VemSolver",
    "MCVEEstimator",
    "MLMCVEEstimator",
]

_CEIL_SLACK = 1e-8


def _ceil(x):
    # a relative slack absorbs the epsilon exponent and round-off in h ratios;
    # capping it at 1/2 keeps large integer-valued counts exact
    return int(math.ceil(x - min(_CEIL_SLACK * x, 0.5)))


def _guard(count, max_count, what):
    if not np.isfinite(count) or count > max_count:
        raise OverflowError(f"{what} sample count {count:.4g} exceeds max_count={max_count}")
    return max(1, _ceil(count))


def mc_sample_count(p, h, target="solution", multiplier=1.0, max_count=10 ** 9):
    """Single-level sample size ``p^{2p} h^{-2p}`` (solution) or ``p^{4p} h^{-4p}`` (QoI).

    Examples
    --------
    >>> mc_sample_count(1, 1 / 8)
    64
    >>> mc_sample_count(2, 1 / 4)
    4096
    """
    p = check_int(p, "p", minimum=1)
    h = check_positive(h, "h")
    check_choice(target, "target", {"solution", "qoi"})
    k = 2 * p if target == "solution" else 4 * p
    return _guard(multiplier * (p / h) ** k, max_count, "MC")


def mlmc_sample_counts(p, level_sizes, epsilon=1e-10, target="solution", multiplier=1.0,
                       max_count=10 ** 9):
    """Per-level counts ``((h_l / h_L)^r l^(1+eps))^2`` with ``r = p`` or ``2p``.

    ``level_sizes`` lists ``h_1 .. h_L`` (or pass a :class:`MeshHierarchy`).
    """
    p = check_int(p, "p", minimum=1)
    check_choice(target, "target", {"solution", "qoi"})
    if isinstance(level_sizes, MeshHierarchy):
        level_sizes = level_sizes.level_sizes
    hs = np.asarray(level_sizes, dtype=float)
    if hs.ndim != 1 or len(hs) == 0 or np.any(hs <= 0):
        raise ValueError("level sizes must be a non-empty list of positive numbers")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    r = p if target == "solution" else 2 * p
    L = len(hs)
    out = []
    for ell in range(1, L + 1):
        x = multiplier * ((hs[ell - 1] / hs[-1]) ** r * ell ** (1.0 + epsilon)) ** 2
        out.append(_guard(x, max_count, f"level-{ell}"))
    return out


@dataclass(frozen=True)
class SampleAllocation:
    method: str
    target: str
    p: int
    counts: tuple
    level_sizes: tuple
    epsilon: float = 1e-10

    @classmethod
    def for_hierarchy(cls, hierarchy, p, method="mlmc", target="solution", epsilon=1e-10,
                      multiplier=1.0, max_count=10 ** 9):
        hs = tuple(float(h) for h in hierarchy.level_sizes)
        if method == "mlmc":
            counts = mlmc_sample_counts(p, hs, epsilon, target, multiplier, max_count)
        elif method == "mc":
            counts = [mc_sample_count(p, hs[-1], target, multiplier, max_count)]
        else:
            raise ValueError(f"method must be 'mc' or 'mlmc', got {method!r}")
        return cls(method, target, int(p), tuple(counts), hs, float(epsilon))


class AffineLevelSystem:
    """Reduced systems ``A(Y) = sum_t w_t(Y) A_t`` on one mesh.

    The stabilization of every element scales with the element mean of the
    coefficient, which is linear in the coefficient, so the decomposition is
    exact.
    """

    def __init__(self, mesh, p, problem):
        model = problem.coefficient
        self._mean_lu = None
        self.mesh = mesh
        self.p = p
        self.model = model
        self.space = space = get_space(mesh, p)
        free = space.layout.free_dofs
        self.free = free
        self.n_free = len(free)
        terms = []
        for term in model.affine_terms():
            A = space.stiffness(term, allow_nonpositive=True)[free][:, free].tocsr()
            A.eliminate_zeros()
            terms.append(A)
        self.terms = terms
        self.term_diags = np.array([A.diagonal() for A in terms])
        # every term on the union sparsity pattern, so a batch of matrices is one array
        n = self.n_free
        pattern = sum(abs(A) for A in terms).tocsr()
        pattern.sort_indices()
        self._indptr = pattern.indptr
        self._indices = pattern.indices
        keys = np.repeat(np.arange(n), np.diff(pattern.indptr)) * n + pattern.indices
        data = np.zeros((len(terms), pattern.nnz))
        for t, A in enumerate(terms):
            coo = A.tocoo()
            pos = np.searchsorted(keys, coo.row.astype(np.int64) * n + coo.col)
            data[t, pos] = coo.data
        self._term_data = data
        self.nnz = pattern.nnz
        self.load = space.load(problem.source)[free]
        self.qoi_vector = space.qoi_vector(problem.qoi_weight)[free]
        self._proj = {}

    def projection(self, which):
        P = self._proj.get(which)
        if P is None:
            P = self.space.projection_matrix(which)[:, self.free].tocsr()
            self._proj[which] = P
        return P

    def matrix(self, weights):
        """Assembled matrix for one weight vector."""
        A = self.terms[0] * float(weights[0])
        for w, At in zip(weights[1:], self.terms[1:]):
            A = A + At * float(w)
        return A.tocsr()

    def batch_matrix(self, W):
        """Block-diagonal CSR matrix with one block ``A(w_s)`` per weight row."""
        B = W.shape[0]
        n = self.n_free
        nnz = len(self._indices)
        data = np.zeros((B, nnz))
        for t in range(len(self.terms)):
            data += W[:, t, None] * self._term_data[t]
        shift = np.arange(B, dtype=np.int64)
        indptr = np.concatenate([(self._indptr[:-1][None, :] + nnz * shift[:, None]).ravel(),
                                 [B * nnz]])
        indices = (self._indices[None, :] + n * shift[:, None]).ravel()
        return sp.csr_matrix((data.ravel(), indices, indptr), shape=(B * n, B * n))

    def mean_factor(self):
        """Sparse LU factorization of the matrix at the centre of the parameter box."""
        if self._mean_lu is None:
            y = self.model.ranges.mean(axis=1)
            w = self.model.term_weights(y[None])[0]
            self._mean_lu = spla.splu(self.matrix(w).tocsc())
        return self._mean_lu

    def solve_batch(self, W, rel_tol=1e-10, max_iter=None, level=None, sample_offset=None,
                    preconditioner="jacobi"):
        """Solve for every weight row of ``W`` (B, n_terms); returns (B, n_free).

        ``preconditioner='mean'`` preconditions every system with the exact
        inverse of the mean-parameter matrix, which is spectrally equivalent
        with constants set by the parameter ranges.
        """
        W = np.asarray(W, dtype=float)
        B = W.shape[0]
        if self.n_free == 0:
            return np.zeros((B, 0)), np.zeros(B, dtype=np.int64)
        diag = np.zeros((B, self.n_free))
        for t in range(len(self.terms)):
            diag += W[:, t, None] * self.term_diags[t]
        A = self.batch_matrix(W)
        n = self.n_free
        precondition = None
        if preconditioner == "mean":
            lu = self.mean_factor()

            def precondition(R, rows):
                return np.ascontiguousarray(lu.solve(np.asfortranarray(R.T)).T)
        elif preconditioner != "jacobi":
            raise ValueError(f"preconditioner must be 'jacobi' or 'mean', got {preconditioner!r}")

        def matvec(X, rows):
            if len(rows) == B:
                return (A @ X.ravel()).reshape(B, n)
            full = np.zeros((B, n))
            full[rows] = X
            return (A @ full.ravel()).reshape(B, n)[rows]

        rhs = np.broadcast_to(self.load, (B, self.n_free))
        return pcg_batch(matvec, diag, rhs, rel_tol=rel_tol, max_iter=max_iter,
                         level=level, sample_offset=sample_offset, precondition=precondition)


def level_system(mesh, p, problem):
    """Cached :class:`AffineLevelSystem` for a mesh, order and problem."""
    key = ("affine_system", int(p))
    store = mesh._cache.setdefault(key, [])
    for prob, sys_ in store:
        if prob is problem:
            return sys_
    sys_ = AffineLevelSystem(mesh, p, problem)
    store.append((problem, sys_))
    return sys_


def default_batch_size(n_free, nnz=0):
    """Samples per batch; a function of the system size only."""
    return int(max(1, min(4096, 2 ** 21 // max(n_free, 1), 2 ** 22 // max(nnz, 1))))


@dataclass
class LevelRecord:
    level: int
    M: int
    N: int
    N_coarse: int
    mean_qoi: float
    var_qoi: float
    var_h1: float
    second_moment_h1: float
    sq_norms: np.ndarray = field(repr=False)
    qoi_samples: np.ndarray = field(repr=False)
    iterations: int = 0


@dataclass
class EstimatorResult:
    """Estimate of ``E[u]`` (field on the finest mesh) and of ``E[Q(u)]``.

    ``cost`` is the one-solve-per-term count ``sum M_l N_l``;
    ``cost_two_solve`` charges both solves of every level difference.
    """

    method: str
    target: str
    p: int
    field: PiecewisePolyField
    qoi: float
    counts: tuple
    dofs: tuple
    cost: int
    cost_two_solve: int
    levels: list
    seed: int
    experiment: str
    projection: str

    @property
    def L(self):
        return len(self.counts)

    @property
    def level_variances(self):
        return [r.var_h1 for r in self.levels]


def _weights(model, stream, level, start, count):
    y = model.transform(stream.uniforms(level, start, count, model.n_vars))
    if model.n_vars:
        lo, _ = model.bounds(y)
        if not np.all(lo > 0):
            i = int(np.flatnonzero(~(lo > 0))[0])
            raise CoefficientError(f"level {level} sample {start + i}: coefficient lower bound "
                                   f"{lo[i]:.3e} is not positive")
    return model.term_weights(y)


def _run_level(problem, fine, coarse, R_coarse, stream, level, M, projection, rel_tol,
               threads, batch_size, preconditioner="jacobi"):
    """Mean and diagnostics of ``M`` samples of ``P_f u_f - R_c P_c u_c`` on the fine mesh.

    Restriction is exact, so differences, their broken norms and the mean can
    all be formed on the fine mesh of the level; the caller re-expands the
    mean on the finest hierarchy level once.
    """
    model = problem.coefficient
    if batch_size is None:
        batch_size = default_batch_size(fine.n_free, fine.nnz)
        if coarse is not None:
            batch_size = min(batch_size, default_batch_size(coarse.n_free, coarse.nnz))
    starts = list(range(0, M, batch_size))
    npol = fine.space.n_poly
    mesh = fine.mesh
    P_f = fine.projection(projection)
    P_c = coarse.projection(projection) if coarse is not None else None

    def work(start):
        count = min(batch_size, M - start)
        W = _weights(model, stream, level, start, count)
        U, it = fine.solve_batch(W, rel_tol, level=level, sample_offset=start,
                                 preconditioner=preconditioner)
        C = P_f @ U.T
        q = U @ fine.qoi_vector
        iters = int(it.sum())
        if coarse is not None:
            Uc, itc = coarse.solve_batch(W, rel_tol, level=level - 1, sample_offset=start,
                                         preconditioner=preconditioner)
            C = C - R_coarse @ (P_c @ Uc.T)
            q = q - Uc @ coarse.qoi_vector
            iters += int(itc.sum())
        C = np.ascontiguousarray(C.T)                   # (count, n_el * npol)
        sq = broken_h1_squared(mesh, fine.p, C.reshape(count, -1, npol))
        return C.sum(axis=0), sq, q, iters

    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    total = np.zeros(mesh.n_elements * npol)
    for part in parts:
        total += part[0]
    sq = np.concatenate([part[1] for part in parts])
    qs = np.concatenate([part[2] for part in parts])
    iters = sum(part[3] for part in parts)
    mean = total / M
    mean_sq = float(broken_h1_squared(mesh, fine.p, mean.reshape(1, -1, npol))[0])
    second = float(sq.mean())
    var_h1 = max(second - mean_sq, 0.0) * M / (M - 1) if M > 1 else 0.0
    var_q = float(qs.var(ddof=1)) if M > 1 else 0.0
    rec = LevelRecord(level, M, fine.n_free, coarse.n_free if coarse is not None else 0,
                      float(qs.mean()), var_q, var_h1, second, sq, qs, iters)
    return mean, rec


def _default_projection(target, projection):
    if projection is None:
        return "energy" if target == "solution" else "l2"
    return check_choice(projection, "projection", {"energy", "l2"})


def mc_estimate(problem, mesh, p, M, stream, target="solution", projection=None,
                rel_tol=1e-10, threads=1, batch_size=None, preconditioner="jacobi"):
    """Single-level Monte Carlo estimate on ``mesh`` with ``M`` samples.

    Samples use the level-1 substream of ``stream``, so an MC run with
    ``M = M_1`` on the coarsest mesh reproduces a one-level MLMC run.
    """
    M = check_int(M, "M", minimum=1)
    check_choice(target, "target", {"solution", "qoi"})
    projection = _default_projection(target, projection)
    sys_ = level_system(mesh, p, problem)
    mean, rec = _run_level(problem, sys_, None, None, stream, 1, M, projection, rel_tol,
                           threads, batch_size, preconditioner)
    fld = PiecewisePolyField(mesh, p, mean.reshape(mesh.n_elements, -1))
    cost = M * sys_.n_free
    return EstimatorResult("mc", target, p, fld, rec.mean_qoi, (M,), (sys_.n_free,), cost, cost,
                           [rec], stream.seed, str(stream.experiment), projection)


def mlmc_estimate(problem, hierarchy, p, counts, stream, target="solution", projection=None,
                  rel_tol=1e-10, threads=1, batch_size=None, preconditioner="jacobi"):
    """Multilevel estimate ``sum_l mean_{M_l}(w_l)`` with one coupled sample per term.

    ``counts[l-1]`` samples are drawn for level ``l``; the level-``l`` term
    solves on ``T_l`` and ``T_{l-1}`` with the same coefficient, and both
    projections are re-expanded exactly on the finest level ``T_L``.
    Level means are summed in level order.
    """
    L = len(counts)
    counts = check_counts(counts)
    if L > hierarchy.n_levels:
        raise ValueError(f"{L} sample counts for a hierarchy with {hierarchy.n_levels} levels")
    check_choice(target, "target", {"solution", "qoi"})
    projection = _default_projection(target, projection)
    final = hierarchy.mesh(L)
    npol = get_space(final, p).n_poly
    total = np.zeros(final.n_elements * npol)
    records = []
    qoi_total = 0.0
    systems = [level_system(hierarchy.mesh(l), p, problem) for l in range(1, L + 1)]
    for ell in range(1, L + 1):
        fine = systems[ell - 1]
        coarse = systems[ell - 2] if ell > 1 else None
        R_c = restriction_matrix(hierarchy, ell - 1, ell, p) if ell > 1 else None
        mean, rec = _run_level(problem, fine, coarse, R_c, stream, ell, counts[ell - 1],
                               projection, rel_tol, threads, batch_size, preconditioner)
        total += mean if ell == L else restriction_matrix(hierarchy, ell, L, p) @ mean
        qoi_total += rec.mean_qoi
        records.append(rec)
    dofs = tuple(s.n_free for s in systems)
    cost = int(sum(m * n for m, n in zip(counts, dofs)))
    cost2 = int(sum(m * (n + (dofs[i - 1] if i else 0))
                    for i, (m, n) in enumerate(zip(counts, dofs))))
    fld = PiecewisePolyField(final, p, total.reshape(final.n_elements, npol))
    return EstimatorResult("mlmc", target, p, fld, float(qoi_total), tuple(counts), dofs, cost,
                           cost2, records, stream.seed, str(stream.experiment), projection)


def estimate_error(result, reference, hierarchy):
    """Broken H1 distance and QoI distance between an estimate and a finer reference."""
    lf = hierarchy.level_of(result.field.mesh)
    lr = hierarchy.level_of(reference.field.mesh)
    c = result.field.coeffs.ravel()
    if lr != lf:
        c = restriction_matrix(hierarchy, lf, lr, result.p) @ c
    diff = (c - reference.field.coeffs.ravel()).reshape(1, reference.field.mesh.n_elements, -1)
    h1 = float(np.sqrt(max(broken_h1_squared(reference.field.mesh, result.p, diff)[0], 0.0)))
    return h1, abs(result.qoi - reference.qoi)


def bootstrap_moment_ratio(sq_a, sq_b, n_boot=2000, seed=0, level=0.95):
    """Bootstrap upper confidence bound of ``mean(sq_b) / mean(sq_a)``."""
    rng = np.random.default_rng(seed)
    a = np.asarray(sq_a, dtype=float)
    b = np.asarray(sq_b, dtype=float)
    ia = rng.integers(0, len(a), size=(n_boot, len(a)))
    ib = rng.integers(0, len(b), size=(n_boot, len(b)))
    ratios = b[ib].mean(axis=1) / a[ia].mean(axis=1)
    return float(np.quantile(ratios, level))


def matched_cost_error(costs, errors, target_cost):
    """Log-log interpolation of an error-versus-cost curve at ``target_cost``.

    Extrapolates linearly in log-log space outside the sampled range.
    """
    c = np.log(np.asarray(costs, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    order = np.argsort(c)
    c, e = c[order], e[order]
    t = math.log(target_cost)
    if len(c) == 1:
        return float(np.exp(e[0]))
    if t <= c[0]:
        i = 0
    elif t >= c[-1]:
        i = len(c) - 2
    else:
        i = int(np.searchsorted(c, t) - 1)
    s = (e[i + 1] - e[i]) / (c[i + 1] - c[i])
    return float(np.exp(e[i] + s * (t - c[i])))


# -- estimator-style wrappers ----------------------------------------------------

class VemSolver(BaseEstimator):
    """Deterministic VE solve with a fit/predict interface.

    ``fit(mesh, alpha=..., f=...)`` solves the Dirichlet problem;
    ``predict(points)`` evaluates the projected solution.
    """

    def __init__(self, p=1, method="cg", rel_tol=1e-10, projection="energy"):
        self.p = p
        self.method = method
        self.rel_tol = rel_tol
        self.projection = projection

    def fit(self, mesh, alpha=1.0, f=1.0, boundary_values=None):
        check_int(self.p, "p", minimum=1)
        check_choice(self.method, "method", {"cg", "direct"})
        system = assemble(mesh, self.p, alpha, f, boundary_values)
        self.solution_ = solve(system, rel_tol=self.rel_tol, method=self.method)
        self.field_ = project_field(self.solution_, self.projection)
        return self

    def transform(self, points):
        """Projected solution values at ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.field_.evaluate(pts, self.field_.locate(pts))

    predict = transform

    def qoi(self, q=1.0):
        return qoi(self.solution_, q)


class _StochasticEstimator(BaseEstimator):
    def _stream(self):
        return SampleStream(check_int(self.seed, "seed", minimum=0), self.experiment)

    def predict(self, points):
        """Estimated mean field at ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        fld = self.result_.field
        return fld.evaluate(pts, fld.locate(pts))

    def transform(self, points):
        return self.predict(points)

    @property
    def qoi_(self):
        return self.result_.qoi


class MCVEEstimator(_StochasticEstimator):
    """Monte Carlo VE estimator; ``fit(problem, hierarchy)`` uses the finest level.

    ``n_samples=None`` uses the practical sample-size formula.
    """

    def __init__(self, p=1, n_samples=None, target="solution", seed=0, experiment="mc",
                 multiplier=1.0, threads=1, rel_tol=1e-10):
        self.p = p
        self.n_samples = n_samples
        self.target = target
        self.seed = seed
        self.experiment = experiment
        self.multiplier = multiplier
        self.threads = threads
        self.rel_tol = rel_tol

    def fit(self, problem, hierarchy, level=None):
        level = hierarchy.n_levels if level is None else check_int(level, "level", minimum=1)
        mesh = hierarchy.mesh(level)
        M = self.n_samples
        if M is None:
            M = mc_sample_count(self.p, mesh.h, self.target, self.multiplier)
        self.result_ = mc_estimate(problem, mesh, self.p, M, self._stream(), self.target,
                                   rel_tol=self.rel_tol, threads=self.threads)
        return self


class MLMCVEEstimator(_StochasticEstimator):
    """Multilevel VE estimator over the first ``L`` levels of a hierarchy."""

    def __init__(self, p=1, L=None, counts=None, target="solution", epsilon=1e-10, seed=0,
                 experiment="mlmc", multiplier=1.0, threads=1, rel_tol=1e-10):
        self.p = p
        self.L = L
        self.counts = counts
        self.target = target
        self.epsilon = epsilon
        self.seed = seed
        self.experiment = experiment
        self.multiplier = multiplier
        self.threads = threads
        self.rel_tol = rel_tol

    def fit(self, problem, hierarchy):
        L = hierarchy.n_levels if self.L is None else check_int(self.L, "L", minimum=1)
        counts = self.counts
        if counts is None:
            counts = mlmc_sample_counts(self.p, hierarchy.level_sizes[:L], self.epsilon,
                                        self.target, self.multiplier)
        self.result_ = mlmc_estimate(problem, hierarchy, self.p, counts, self._stream(),
                                     self.target, rel_tol=self.rel_tol, threads=self.threads)
        return self
