"""Preconditioned conjugate gradients for single and batched systems.

The default preconditioner is Jacobi; the batched solver also accepts a
custom preconditioner callable.

Batches are stored sample-major, one right-hand side per row, and every
reduction runs along rows. The iterates of one row therefore do not depend on
which other rows share the batch, which keeps estimator results independent
of batching and thread count.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SolverError

__all__ = ["SolverInfo", "default_max_iter", "pcg", "pcg_batch", "sparse_matvec"]


@dataclass
class SolverInfo:
    """Diagnostics of one CG solve."""

    iterations: int
    relative_residual: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


def default_max_iter(n):
    return int(10 * math.sqrt(n) + 1000)


def sparse_matvec(A):
    """Batched product ``X -> (A @ X.T).T`` for row-stacked vectors."""
    def matvec(X, rows=None):
        return np.ascontiguousarray((A @ X.T).T)
    return matvec


def _rowdot(X, Y):
    return (X * Y).sum(axis=1)


def pcg_batch(matvec, diag, B, rel_tol=1e-10, max_iter=None, record_history=False,
              level=None, sample_offset=None, precondition=None):
    """Solve ``A_s x_s = b_s`` for every row ``s`` of ``B``.

    Parameters
    ----------
    matvec : callable
        ``matvec(X, rows)`` returns the row-stacked products ``A_s x_s`` for
        the rows ``rows`` of the batch (``X`` has one row per entry of ``rows``).
    diag : ndarray, shape (n,) or (n_rhs, n)
        Jacobi preconditioner, the diagonal of ``A`` (shared or per row).
    B : ndarray, shape (n_rhs, n)
    rel_tol : float
        Stop when ``||b - A x|| <= rel_tol * ||b||``.
    precondition : callable, optional
        ``precondition(R, rows)`` returns ``M^{-1} r_s`` for the residual
        rows ``R``; replaces the Jacobi step (``diag`` is then ignored).

    Returns
    -------
    X : ndarray, shape (n_rhs, n)
    iterations : ndarray of int
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    nr, n = B.shape
    if max_iter is None:
        max_iter = default_max_iter(n)
    if precondition is None:
        diag = np.asarray(diag, dtype=float)
        if np.any(diag <= 0):
            raise SolverError("preconditioner diagonal is not positive; matrix is not SPD",
                              level=level)
        inv_diag = 1.0 / diag
        shared = inv_diag.ndim == 1

        def precondition(R, rows):
            return R * (inv_diag if shared else inv_diag[rows])
    X = np.zeros_like(B)
    R = B.copy()
    bnorm = np.sqrt(_rowdot(B, B))
    iters = np.zeros(nr, dtype=np.int64)
    active = np.flatnonzero(bnorm > 0)
    if len(active) == 0:
        return X, iters
    Z = precondition(R[active], active)
    P = Z.copy()
    rz = _rowdot(R[active], Z)
    history = [] if record_history else None
    Ra = R[active]
    Xa = X[active]
    for it in range(1, max_iter + 1):
        Q = matvec(P, active)
        pq = _rowdot(P, Q)
        if np.any(pq <= 0):
            bad = int(active[np.flatnonzero(pq <= 0)[0]])
            raise SolverError("non-positive curvature in CG; matrix is not SPD",
                              level=level, sample=_sample(sample_offset, bad))
        alpha = rz / pq
        Xa += alpha[:, None] * P
        Ra -= alpha[:, None] * Q
        res = np.sqrt(_rowdot(Ra, Ra)) / bnorm[active]
        if record_history:
            history.append(float(res.max()))
        done = res <= rel_tol
        if done.any():
            X[active[done]] = Xa[done]
            iters[active[done]] = it
            keep = ~done
            active = active[keep]
            if len(active) == 0:
                return X, iters
            Xa, Ra, P, rz = Xa[keep], Ra[keep], P[keep], rz[keep]
        Z = precondition(Ra, active)
        rz_new = _rowdot(Ra, Z)
        beta = rz_new / rz
        P = Z + beta[:, None] * P
        rz = rz_new
    worst = int(active[0])
    raise SolverError(
        f"CG did not reach relative residual {rel_tol:g} in {max_iter} iterations "
        f"({len(active)} unconverged right-hand side(s))",
        residual_history=history, level=level, sample=_sample(sample_offset, worst))


def _sample(offset, row):
    return None if offset is None else int(offset + row)


def pcg(A, b, rel_tol=1e-10, max_iter=None):
    """Solve one SPD sparse system; returns ``(x, SolverInfo)``."""
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = default_max_iter(n)
    history = []
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolverInfo(0, 0.0, True, history)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("preconditioner diagonal is not positive; matrix is not SPD")
    inv_diag = 1.0 / diag
    x = np.zeros(n)
    r = b.copy()
    z = r * inv_diag
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        q = A @ p
        pq = p @ q
        if pq <= 0:
            raise SolverError("non-positive curvature in CG; matrix is not SPD",
                              residual_history=history)
        a = rz / pq
        x += a * p
        r -= a * q
        res = float(np.linalg.norm(r)) / bnorm
        history.append(res)
        if res <= rel_tol:
            return x, SolverInfo(it, res, True, history)
        z = r * inv_diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach relative residual {rel_tol:g} in {max_iter} iterations",
                      residual_history=history)
