import numpy as np
import pytest

from proxcorr.inner import (NoClosedForm, ResolventFailure, SolverSettings, closed_form_resolvent,
                            estimate_lipschitz, solve_saddle)
from proxcorr.operators import (AffineOperator, InexactnessCriterion, Schedule, box_normal_cone,
                                s_t_distance, zero_operator)
from proxcorr.problems import build_coupled_qp, build_ns1
from proxcorr.resolvent import resolve_rows

EXACT = InexactnessCriterion.exact()


def spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + 0.5 * np.eye(n)


def test_quadratic_matches_linear_solve():
    rng = np.random.default_rng(4)
    H = np.stack([spd(rng, 3) for _ in range(4)])
    g = rng.standard_normal((4, 3))
    alpha = 0.6
    # a far-away box forces the iterative path while leaving the solution interior
    op = AffineOperator(H, g, lower=np.full((4, 3), -100.0), upper=np.full((4, 3), 100.0))
    X = rng.standard_normal((4, 3))
    res = solve_saddle(op, alpha, X, 1e-12, settings=SolverSettings(max_iterations=1000))
    assert res.converged.all()
    exact = np.linalg.solve(np.eye(3) + alpha * H, (X + alpha * g)[..., None])[..., 0]
    np.testing.assert_allclose(res.points, exact, atol=1e-10)


def test_looser_certificate_stops_earlier():
    _, op = build_coupled_qp(7)
    X = np.random.default_rng(1).standard_normal((5, 5))
    tight = solve_saddle(op, 2.0, X, 1e-10)
    loose = solve_saddle(op, 2.0, X, 0.1)
    assert tight.converged.all() and loose.converged.all()
    assert np.all(loose.iterations <= tight.iterations)
    assert loose.iterations.sum() < tight.iterations.sum()
    assert np.all(loose.certificates <= 0.1)


def test_closed_form_projection():
    op = box_normal_cone([[0.0, 0.0]], [[1.0, 1.0]])
    res = closed_form_resolvent(op, 3.0, [[-0.5, 1.7]])
    np.testing.assert_array_equal(res.points, [[0.0, 1.0]])
    assert res.method == "projection"


def test_closed_form_linear():
    op = AffineOperator(np.array([[[2.0]]]), np.zeros((1, 1)))
    res = closed_form_resolvent(op, 0.5, [[3.0]])
    assert res.points[0, 0] == pytest.approx(1.5, abs=1e-15)


def test_closed_form_refuses_affine_with_box():
    _, op = build_coupled_qp(7)
    with pytest.raises(NoClosedForm):
        closed_form_resolvent(op, 1.0, np.zeros((5, 5)))
    with pytest.raises(NoClosedForm):
        closed_form_resolvent(build_ns1(3)[1], 1.0, np.ones((3, 2)))


def test_closed_form_identity_for_zero_operator():
    res = closed_form_resolvent(zero_operator(2, 3), 1.0, np.ones((2, 3)))
    assert res.method == "identity" and np.all(res.certificates == 0)


@pytest.mark.parametrize("builder", [lambda: build_ns1(12)[1], lambda: build_coupled_qp(7)[1]])
def test_certificates_are_honest(builder):
    op = builder()
    rng = np.random.default_rng(2)
    X = op.project(2 * rng.standard_normal((op.num_agents, op.dim))) + rng.standard_normal((op.num_agents, op.dim))
    for crit in (EXACT, InexactnessCriterion.absolute(Schedule("power", 1.0, p=2.0))):
        res = resolve_rows(op, 1.5, X, crit, k=2)
        np.testing.assert_allclose(res.certificates, s_t_distance(op, 1.5, X, res.points), rtol=1e-12, atol=1e-15)
        assert np.all(res.certificates <= crit.bound(2, 1.5))


def test_inexact_point_within_alpha_times_certificate():
    _, op = build_coupled_qp(7)
    X = np.random.default_rng(8).standard_normal((5, 5))
    alpha = 2.0
    exact = resolve_rows(op, alpha, X, EXACT).points
    crit = InexactnessCriterion.absolute(Schedule("geometric", 0.5, q=0.5))
    res = resolve_rows(op, alpha, X, crit, k=0)
    gap = np.linalg.norm(res.points - exact, axis=1)
    assert np.all(gap <= alpha * res.certificates + 1e-9)


def test_relative_criterion_uses_step_length():
    inst, op = build_ns1(6)
    rng = np.random.default_rng(0)
    prev = op.project(np.column_stack([np.ones(6), rng.random(6)]))
    X = prev + 0.5 * rng.standard_normal(prev.shape)
    crit = InexactnessCriterion.relative(Schedule("geometric", 0.5, q=0.9))
    res = resolve_rows(op, 1.0, X, crit, k=1, previous=prev)
    bound = crit.bound(1, 1.0, np.linalg.norm(res.points - prev, axis=1))
    assert np.all(res.certificates <= bound)


def test_iteration_cap_raises_with_agent_indices():
    _, op = build_coupled_qp(7)
    X = 5 * np.random.default_rng(3).standard_normal((5, 5))
    with pytest.raises(ResolventFailure) as err:
        resolve_rows(op, 2.0, X, EXACT, settings=SolverSettings(max_iterations=3))
    assert err.value.agents and min(err.value.agents) >= 1
    assert err.value.best_certificate > 0
    assert "inner iterations" in str(err.value)


def test_warm_start_saves_iterations():
    _, op = build_coupled_qp(7)
    X = np.random.default_rng(5).standard_normal((5, 5))
    sol = resolve_rows(op, 2.0, X, EXACT).points
    cold = solve_saddle(op, 2.0, X + 1e-3, 1e-10)
    warm = solve_saddle(op, 2.0, X + 1e-3, 1e-10, start=sol)
    assert warm.iterations.sum() < cold.iterations.sum()


def test_fixed_step_without_backtracking_still_converges_when_small():
    _, op = build_ns1(4)
    X = np.array([[1.2, 0.3], [1.0, 2.0], [1.5, 0.0], [2.0, 1.0]])
    res = solve_saddle(op, 1.0, X, 1e-10, settings=SolverSettings(step=0.1, backtracking=False))
    assert res.converged.all()


def test_lipschitz_estimate_below_operator_norm():
    _, op = build_coupled_qp(7)
    est = estimate_lipschitz(op, np.arange(5), np.zeros((5, 5)), samples=200)
    true = np.array([np.linalg.norm(A, 2) for A in op.A])
    assert np.all(est <= true + 1e-12)
    assert np.all(est >= 0.3 * true)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(step=0.0)
    with pytest.raises(ValueError):
        SolverSettings(max_iterations=0)
