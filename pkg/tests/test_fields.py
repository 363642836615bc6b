import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyuq.basis import n_poly
from polyuq.fields import (PiecewisePolyField, axpy, read_field_csv, restrict_to_fine,
                           restriction_matrix)
from polyuq.geometry import build_cartesian_hierarchy, build_refined_hierarchy, cartesian_mesh
from polyuq.problems import strata_geometry
from polyuq.vem import assemble, get_space, project_field, solve

H_CART = build_cartesian_hierarchy(4, n0=1)
H_STRATA = build_refined_hierarchy(strata_geometry(length=1.0, n_layers=3)[1], 3)


def _field_of(f, mesh, p):
    """L2 projection coefficients of a smooth function (via its interpolant)."""
    space = get_space(mesh, p)
    return PiecewisePolyField(mesh, p, space.project(space.interpolate(f), "l2"))


def _random_field(rng, mesh, p):
    return PiecewisePolyField(mesh, p, rng.normal(size=(mesh.n_elements, n_poly(p))))


def test_norms_of_simple_fields():
    one = cartesian_mesh(1)
    u = _field_of(lambda x: x[:, 0], one, 1)
    assert u.broken_h1_seminorm() == pytest.approx(1.0, rel=1e-13)
    assert u.l2_norm() == pytest.approx(1 / np.sqrt(3), rel=1e-13)
    c = _field_of(lambda x: 3.0 + 0 * x[:, 0], cartesian_mesh(3), 2)
    assert c.broken_h1_seminorm() == pytest.approx(0.0, abs=1e-13)
    z = axpy(-1.0, u, u)
    assert z.broken_h1_seminorm() == 0.0 and z.l2_norm() == 0.0


def test_field_shape_and_compatibility_checks():
    m = cartesian_mesh(2)
    with pytest.raises(ValueError):
        PiecewisePolyField(m, 1, np.zeros((3, 3)))
    a, b = PiecewisePolyField.zeros(m, 1), PiecewisePolyField.zeros(cartesian_mesh(2), 1)
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(ValueError):
        restriction_matrix(H_CART, 3, 2, 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 3), st.floats(-5, 5),
       st.sampled_from(["cart", "strata"]))
def test_restriction_is_linear_and_preserves_norms(seed, p, a, which):
    H = H_CART if which == "cart" else H_STRATA
    rng = np.random.default_rng(seed)
    f = _random_field(rng, H.mesh(1), p)
    g = _random_field(rng, H.mesh(1), p)
    lhs = restrict_to_fine(axpy(a, f, g), H, H.n_levels)
    rhs = axpy(a, restrict_to_fine(f, H, H.n_levels), restrict_to_fine(g, H, H.n_levels))
    scale = np.abs(rhs.coeffs).max()
    assert np.abs(lhs.coeffs - rhs.coeffs).max() <= 1e-13 * scale
    rf = restrict_to_fine(f, H, H.n_levels)
    assert rf.broken_h1_seminorm() == pytest.approx(f.broken_h1_seminorm(), rel=1e-10)
    assert rf.l2_norm() == pytest.approx(f.l2_norm(), rel=1e-10)


def test_restriction_preserves_point_values():
    rng = np.random.default_rng(1)
    f = _random_field(rng, H_STRATA.mesh(1), 2)
    fine = restrict_to_fine(f, H_STRATA, 3)
    anc = H_STRATA.ancestor_map(3, 1)
    pts = fine.mesh.centroids
    assert np.allclose(fine.evaluate(pts, np.arange(len(pts))), f.evaluate(pts, anc),
                       rtol=1e-12, atol=1e-12)


def test_restriction_composes():
    R31 = restriction_matrix(H_CART, 1, 3, 2)
    R32, R21 = restriction_matrix(H_CART, 2, 3, 2), restriction_matrix(H_CART, 1, 2, 2)
    assert abs(R31 - R32 @ R21).max() <= 1e-13


def test_telescoping_sum_of_level_solutions():
    p = 2
    alpha = lambda x: 1 + x[:, 0] * x[:, 1]   # noqa: E731
    L = H_CART.n_levels
    fields = []
    for lev in range(1, L + 1):
        sol = solve(assemble(H_CART.mesh(lev), p, alpha, 1.0), method="direct")
        fields.append(restrict_to_fine(project_field(sol), H_CART, L))
    total = fields[0]
    for lev in range(1, L):
        total = total + (fields[lev] - fields[lev - 1])
    assert (total - fields[-1]).broken_h1_seminorm() <= 1e-10


def test_field_csv_round_trip(tmp_path):
    from polyuq.fields import write_field_csv
    rng = np.random.default_rng(5)
    m = H_STRATA.mesh(2)
    f = _random_field(rng, m, 3)
    write_field_csv(f, tmp_path / "f.csv")
    g = read_field_csv(tmp_path / "f.csv", m, 3)
    assert np.array_equal(f.coeffs, g.coeffs)


def test_locate_finds_containing_element():
    m = H_STRATA.mesh(2)
    f = PiecewisePolyField.zeros(m, 1)
    assert np.array_equal(f.locate(m.centroids), np.arange(m.n_elements))
    assert f.locate([[10.0, 10.0]])[0] == -1
