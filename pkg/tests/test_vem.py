import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyuq.exceptions import CoefficientError
from polyuq.geometry import cartesian_mesh, voronoi_mesh
from polyuq.problems import polynomial_exact_solution
from polyuq.solvers import pcg
from polyuq.vem import (DofLayout, assemble, element_operators, get_space, project_field, qoi,
                        solve)
from polyuq.vem import _projectors

from conftest import random_convex_polygon

UNIT_SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def test_unit_square_p1_stiffness_by_hand():
    # consistency 1/2 [[1,0,-1,0],...] from the boundary-integral gradients
    # plus dofi-dofi stabilisation 1/4 s s^T with s = (1,-1,1,-1)
    A = element_operators(UNIT_SQUARE, 1).A_local
    expected = np.full((4, 4), -0.25) + np.eye(4)
    assert np.allclose(A, expected, atol=1e-14)


def test_dof_layout_counts():
    m = cartesian_mesh(2)
    for p in (1, 2, 3):
        lay = DofLayout(m, p)
        assert lay.n_dofs == m.n_vertices + m.n_edges * (p - 1) + m.n_elements * p * (p - 1) // 2
        assert lay.dirichlet_mask.sum() == 8 * p
    with pytest.raises(ValueError):
        DofLayout(m, 0)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_projector_reproduction_and_stabiliser_kernel(p):
    rng = np.random.default_rng(p)
    for _ in range(20):
        ops = _projectors(random_convex_polygon(rng, scale=rng.uniform(0.01, 10)), p)
        eye = np.eye(ops.D.shape[1])
        assert np.allclose(ops.PiNabla_star @ ops.D, eye, atol=1e-10)
        assert np.allclose(ops.Pi0_star @ ops.D, eye, atol=1e-10)
        assert np.max(np.abs(ops.stab @ ops.D)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3), st.floats(0.1, 50))
def test_local_matrix_symmetric_psd_with_constant_kernel(seed, p, alpha):
    rng = np.random.default_rng(seed)
    A = element_operators(random_convex_polygon(rng), p, alpha).A_local
    amax = np.abs(A).max()
    assert np.abs(A - A.T).max() <= 1e-12 * amax
    w = np.linalg.eigvalsh(A)
    assert w[0] >= -1e-10 * amax
    assert np.sum(w < 1e-9 * amax) == 1            # kernel = constants
    ones = _projectors(np.eye(2)[[0, 1, 1]] * 0 + [[0, 0], [1, 0], [0, 1]], p).D[:, 0]
    assert ones.shape  # constant DOF vector exists for any element
    n = len(A)
    const = np.zeros(n)
    const[: n - p * (p - 1) // 2] = 1.0
    if p > 1:
        const[-p * (p - 1) // 2] = 1.0   # first moment of 1 is 1
    assert np.abs(A @ const).max() <= 1e-10 * amax


def test_nonpositive_coefficient_rejected():
    with pytest.raises(CoefficientError):
        element_operators(UNIT_SQUARE, 1, lambda x: x[:, 0] - 0.5)
    with pytest.raises(CoefficientError):
        assemble(cartesian_mesh(2), 1, alpha=-1.0)


@pytest.mark.parametrize("p", [1, 2, 3])
@pytest.mark.parametrize("mesh", [cartesian_mesh(3), voronoi_mesh(10, seed=2)],
                         ids=["quad", "voronoi"])
def test_patch_test_polynomial_solution(p, mesh):
    coeffs = {(a, b): 1.0 / (1 + a + 2 * b) for a in range(p + 1) for b in range(p + 1 - a)}
    ex = polynomial_exact_solution(coeffs)
    sys_ = assemble(mesh, p, 2.5, lambda x: 2.5 * ex.source(x), boundary_values=ex.value)
    sol = solve(sys_, method="direct")
    interp = get_space(mesh, p).interpolate(ex.value)
    assert np.abs(sol.dofs - interp).max() <= 1e-8
    assert abs(qoi(sol) - ex.qoi) <= 1e-8


def test_direct_and_cg_agree():
    mesh = voronoi_mesh(30, seed=5)
    sys_ = assemble(mesh, 2, lambda x: 1 + x[:, 0] ** 2, 1.0)
    a = solve(sys_, rel_tol=1e-12)
    b = solve(sys_, method="direct")
    assert a.info.converged
    assert np.abs(a.dofs - b.dofs).max() <= 1e-9 * np.abs(b.dofs).max()


def test_dirichlet_dofs_are_zero():
    mesh = cartesian_mesh(4)
    sol = solve(assemble(mesh, 2, 1.0, 1.0))
    assert np.all(sol.dofs[sol.space.layout.dirichlet_mask] == 0.0)


def test_global_stiffness_symmetric():
    A = assemble(voronoi_mesh(15, seed=9), 3, 2.0, 1.0).matrix
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_pcg_history_and_info():
    A = assemble(cartesian_mesh(8), 1, 1.0, 1.0).matrix
    b = np.ones(A.shape[0])
    x, info = pcg(A, b, rel_tol=1e-10)
    assert info.converged
    assert np.linalg.norm(b - A @ x) <= 1.01e-10 * np.linalg.norm(b)


def test_qoi_matches_projection_identity_and_is_linear():
    mesh = voronoi_mesh(12, seed=8)
    space = get_space(mesh, 2)
    rng = np.random.default_rng(0)
    q = lambda x: 1 + x[:, 0] * x[:, 1]   # noqa: E731
    sol = solve(assemble(mesh, 2, 1.0, 1.0))
    assert qoi(sol, q) == pytest.approx(qoi(project_field(sol, "l2"), q), rel=1e-12)
    g = space.qoi_vector(q)
    v, w = rng.normal(size=(2, space.n_dofs))
    a, b = 1.7, -0.3
    assert g @ (a * v + b * w) == pytest.approx(a * (g @ v) + b * (g @ w), rel=1e-12)


def test_qoi_of_constant_is_area_times_mean():
    mesh = voronoi_mesh(8, seed=1)
    sol = solve(assemble(mesh, 1, 1.0, 1.0))
    fld = project_field(sol, "l2")
    assert qoi(sol) == pytest.approx(np.sum(mesh.areas * fld.element_means()), rel=1e-12)
