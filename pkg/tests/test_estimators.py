import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from sklearn.base import clone

from polyuq.estimators import (MCVEEstimator, MLMCVEEstimator, SampleAllocation, VemSolver,
                               bootstrap_moment_ratio, estimate_error, matched_cost_error,
                               mc_estimate, mc_sample_count, mlmc_estimate, mlmc_sample_counts)
from polyuq.exceptions import CoefficientError
from polyuq.fields import restrict_to_fine
from polyuq.geometry import build_cartesian_hierarchy, cartesian_mesh
from polyuq.problems import (StochasticProblem, deterministic_problem,
                             smooth_coefficient_problem)
from polyuq.stochastic import SampleStream, SmoothKLCoefficient
from polyuq.vem import assemble, project_field, qoi, solve

H3 = build_cartesian_hierarchy(3, n0=2)
SMOOTH = smooth_coefficient_problem()


def _h1(a, b):
    return (a - b).broken_h1_seminorm()


# -- sample-size formulas ---------------------------------------------------------

def test_mc_count_examples():
    assert mc_sample_count(1, 1 / 8) == 64
    assert mc_sample_count(2, 1 / 4) == 4096
    assert mc_sample_count(1, 1 / 2, target="qoi") == 16
    with pytest.raises(ValueError):
        mc_sample_count(0, 0.5)
    with pytest.raises(ValueError):
        mc_sample_count(1, -1.0)
    with pytest.raises(OverflowError):
        mc_sample_count(3, 1e-3, max_count=10 ** 6)


def test_mlmc_count_examples():
    hs = [2.0 ** -ell for ell in range(1, 7)]
    c = mlmc_sample_counts(1, hs)
    assert c == [1024, 1024, 576, 256, 100, 36]
    assert mlmc_sample_counts(2, hs[:4])[-1] == 16
    for p in (1, 2, 3):
        assert mlmc_sample_counts(p, [0.3]) == [1]
    assert mlmc_sample_counts(1, H3) == mlmc_sample_counts(1, H3.level_sizes)
    alloc = SampleAllocation.for_hierarchy(H3, 1, method="mc")
    assert alloc.counts == (mc_sample_count(1, H3.level_sizes[-1]),)


@pytest.mark.parametrize("p", [1, 2])
@pytest.mark.parametrize("L", range(2, 9))
def test_mlmc_counts_monotone(p, L):
    # for p = 1 the first two exact values tie (4^(L-1) * 1 = 4^(L-2) * 2^2), so any
    # eps above the ceiling slack makes M_2 exceed M_1; larger eps is only checked for p = 2
    for eps in ((1e-10,) if p == 1 else (1e-10, 1e-3, 0.1)):
        c = mlmc_sample_counts(p, [2.0 ** -ell for ell in range(1, L + 1)], eps)
        assert all(a >= b for a, b in zip(c[:-2], c[1:-1]))
        assert all(isinstance(m, int) and m >= 1 for m in c)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 8), st.integers(1, 100),
       st.sampled_from(["solution", "qoi"]))
def test_counts_match_integer_formula(p, L, mult, target):
    # with h_l / h_L = 2^(L-l) the formula is an integer up to the l^(2 eps) factor
    hs = [2.0 ** -ell for ell in range(1, L + 1)]
    r = p if target == "solution" else 2 * p
    assume(mult * (2 ** (r * (L - 1)) * 1) ** 2 <= 10 ** 9)
    counts = mlmc_sample_counts(p, hs, 1e-10, target, mult)
    for ell, m in enumerate(counts, start=1):
        assert m == mult * (2 ** (r * (L - ell)) * ell) ** 2


# -- estimator identities ---------------------------------------------------------

def test_deterministic_coefficient_zero_variance_and_telescoping():
    alpha = lambda x: 2 + x[:, 0]                       # noqa: E731
    prob = deterministic_problem(alpha, alpha_range=(2.0, 3.0))
    exact = project_field(solve(assemble(H3.mesh(3), 2, alpha, 1.0), rel_tol=1e-13))
    stream = SampleStream(0, "det")
    for counts in ([5, 3, 1], [1, 1, 1], [7, 2, 4]):
        res = mlmc_estimate(prob, H3, 2, counts, stream, rel_tol=1e-13)
        assert _h1(res.field, exact) <= 1e-10
        assert all(r.var_h1 <= 1e-12 * r.second_moment_h1 for r in res.levels)
    mc = mc_estimate(prob, H3.mesh(3), 2, 4, stream, rel_tol=1e-13)
    assert _h1(mc.field, exact) <= 1e-10


def test_mc_with_one_sample_is_that_sample():
    stream = SampleStream(4, "one")
    res = mc_estimate(SMOOTH, H3.mesh(2), 1, 1, stream, rel_tol=1e-13)
    y = SMOOTH.coefficient.transform(stream.uniforms(1, 0, 1, 1))[0]
    sol = solve(assemble(H3.mesh(2), 1, lambda x: SMOOTH.coefficient.evaluate(x, y), 1.0),
                rel_tol=1e-13)
    assert _h1(res.field, project_field(sol)) <= 1e-10 * project_field(sol).broken_h1_seminorm()
    assert res.qoi == pytest.approx(qoi(sol), rel=1e-10)
    assert res.cost == H3.dof_count(2, 1)


def test_single_level_mlmc_equals_mc():
    stream = SampleStream(2, "l1")
    a = mlmc_estimate(SMOOTH, H3, 1, [9], stream)
    b = mc_estimate(SMOOTH, H3.mesh(1), 1, 9, stream)
    assert np.array_equal(a.field.coeffs, b.field.coeffs)
    assert a.qoi == b.qoi


def test_qoi_estimate_is_qoi_of_l2_mean_field():
    stream = SampleStream(9, "lin")
    res = mlmc_estimate(SMOOTH, H3, 2, [12, 5, 3], stream, target="qoi")
    assert res.projection == "l2"
    assert res.qoi == pytest.approx(qoi(res.field, 1.0), rel=1e-12, abs=1e-15)
    mc = mc_estimate(SMOOTH, H3.mesh(3), 1, 6, stream, target="qoi")
    assert mc.qoi == pytest.approx(qoi(mc.field, 1.0), rel=1e-12)


def test_thread_count_and_batching_do_not_change_results():
    stream = SampleStream(3, "threads")
    a = mlmc_estimate(SMOOTH, H3, 1, [40, 17, 5], stream, threads=1, batch_size=6)
    b = mlmc_estimate(SMOOTH, H3, 1, [40, 17, 5], stream, threads=4, batch_size=6)
    c = mlmc_estimate(SMOOTH, H3, 1, [40, 17, 5], stream, threads=1)
    assert np.array_equal(a.field.coeffs, b.field.coeffs)
    assert a.qoi == b.qoi
    assert np.allclose(a.field.coeffs, c.field.coeffs, rtol=1e-12, atol=1e-15)


def test_cost_formulas():
    res = mlmc_estimate(SMOOTH, H3, 2, [6, 3, 2], SampleStream(0, "cost"))
    N = [H3.dof_count(l, 2) for l in (1, 2, 3)]
    assert res.dofs == tuple(N)
    assert res.cost == 6 * N[0] + 3 * N[1] + 2 * N[2]
    assert res.cost_two_solve == 6 * N[0] + 3 * (N[1] + N[0]) + 2 * (N[2] + N[1])
    assert res.field.mesh is H3.mesh(3)
    assert res.L == 3 and len(res.level_variances) == 3


def test_estimate_error_against_restricted_reference():
    stream = SampleStream(1, "err")
    ref = mlmc_estimate(SMOOTH, H3, 1, [8, 4, 2], stream)
    coarse = mlmc_estimate(SMOOTH, H3, 1, [8, 4], stream)
    h1, dq = estimate_error(coarse, ref, H3)
    fine_field = restrict_to_fine(coarse.field, H3, 3)
    assert h1 == pytest.approx(_h1(fine_field, ref.field), rel=1e-10)
    assert dq == abs(coarse.qoi - ref.qoi)
    assert estimate_error(ref, ref, H3) == (0.0, 0.0)


def test_nonpositive_sample_raises_with_location():
    bad = SmoothKLCoefficient(lambda x: 1 + 0 * x[:, 0], [lambda x: 1 + 0 * x[:, 0]], [1.0],
                              [(-0.5, 0.5)], (1.0, 1.0), [(1.0, 1.0)])
    bad.ranges = np.array([[-2.0, -1.5]])             # corrupt after validation
    with pytest.raises(CoefficientError, match="sample 0"):
        mc_estimate(StochasticProblem(bad), H3.mesh(1), 1, 3, SampleStream(0))


def test_level_variance_decay_bootstrap():
    H = build_cartesian_hierarchy(5, n0=2)
    res = mlmc_estimate(SMOOTH, H, 1, [200] * 5, SampleStream(0, "decay"))
    for ell in range(2, 5):
        a, b = res.levels[ell - 1].sq_norms, res.levels[ell].sq_norms
        assert bootstrap_moment_ratio(a, b, seed=ell) < 1.0


def test_matched_cost_error_interpolation():
    costs, errs = [1e2, 1e3, 1e4], [1e-1, 1e-2, 1e-3]
    assert matched_cost_error(costs, errs, 10 ** 2.5) == pytest.approx(10 ** -1.5)
    assert matched_cost_error(costs, errs, 1e5) == pytest.approx(1e-4)
    assert matched_cost_error(costs[::-1], errs[::-1], 1e1) == pytest.approx(1.0)
    assert matched_cost_error([5.0], [0.3], 1e9) == 0.3


# -- estimator-style wrappers -----------------------------------------------------

def test_wrappers_params_and_clone():
    for est in (VemSolver(p=2), MCVEEstimator(p=2, seed=3), MLMCVEEstimator(L=2, seed=5)):
        c = clone(est)
        assert c.get_params() == est.get_params()
        c.set_params(p=3)
        assert c.p == 3 and est.p != 3


def test_wrappers_fit_and_predict():
    mesh = cartesian_mesh(4)
    v = VemSolver(p=2).fit(mesh, alpha=1.0, f=1.0)
    assert v.predict([[0.5, 0.5]]).shape == (1,)
    assert v.qoi() == pytest.approx(qoi(v.solution_))
    ml = MLMCVEEstimator(p=1, L=2, seed=1).fit(SMOOTH, H3)
    direct = mlmc_estimate(SMOOTH, H3, 1, mlmc_sample_counts(1, H3.level_sizes[:2]),
                           SampleStream(1, "mlmc"))
    assert ml.qoi_ == direct.qoi
    mc = MCVEEstimator(p=1, n_samples=3, seed=1).fit(SMOOTH, H3, level=2)
    assert mc.result_.counts == (3,)
    pts = H3.mesh(2).centroids
    assert np.allclose(mc.transform(pts), mc.predict(pts))
