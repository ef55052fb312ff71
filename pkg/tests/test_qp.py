import numpy as np
import pytest
import scipy.sparse as sp

from qp_oracle import active_set_solve, random_feasible_qp, self_check

from drvpp.errors import SolverError
from drvpp.qp import (QpProblem, QpSolver, complementarity_residual, kkt_residuals, solve,
                      solve_or_raise)


def _qp(P, q, A=None, l=(), u=()):
    n = len(q)
    A = sp.csc_matrix((0, n)) if A is None else sp.csc_matrix(np.atleast_2d(A))
    return QpProblem(sp.csc_matrix(np.atleast_2d(P)), np.asarray(q, float), A,
                     np.asarray(l, float), np.asarray(u, float))


def test_active_lower_bound():
    # min x^2 s.t. x >= 1: x = 1, multiplier -2 in the Px + q + A'y = 0 convention
    p = _qp([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
    s = solve(p)
    assert s.solved
    assert s.x[0] == pytest.approx(1.0, abs=1e-6)
    assert s.y[0] == pytest.approx(-2.0, abs=1e-5)


def test_unconstrained_projection():
    c = np.array([1.5, -2.0, 0.25])
    s = solve(_qp(np.eye(3), -c))
    assert s.solved
    np.testing.assert_allclose(s.x, c, atol=1e-6)


def test_kkt_residuals_examples():
    p = _qp([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
    rp, rd = kkt_residuals(p, np.array([1.0]), np.array([-2.0]))
    assert rp <= 1e-9 and rd <= 1e-9
    rp, _ = kkt_residuals(p, np.array([0.9]), np.array([-2.0]))
    assert rp >= 0.1 - 1e-9
    zero = _qp(np.zeros((2, 2)), np.zeros(2))
    assert kkt_residuals(zero, np.array([3.0, -7.0]), np.zeros(0)) == (0.0, 0.0)


def test_complementarity_residual_examples():
    # x >= 1 attained with the lower-bound multiplier sign: complementary
    p = _qp([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
    assert complementarity_residual(p, np.array([1.0]), np.array([-2.0])) == 0.0
    # same multiplier with the row slack by 0.5: residual min(2, 0.5)
    assert complementarity_residual(p, np.array([1.5]), np.array([-2.0])) == pytest.approx(0.5)
    # upper-bound sign on a row without an upper bound is never complementary
    assert complementarity_residual(p, np.array([1.0]), np.array([0.3])) == pytest.approx(0.3)
    # box row at its lower bound carrying an upper-bound multiplier
    box = _qp([[1.0]], [0.0], [[1.0]], [0.0], [10.0])
    assert complementarity_residual(box, np.array([0.0]), np.array([4.0])) == pytest.approx(4.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        _qp([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        _qp([[1.0]], [0.0], [[1.0]], [2.0], [1.0])
    with pytest.raises(ValueError):
        _qp([[1.0]], [0.0, 1.0])


def test_equality_constrained_closed_form():
    # min 1/2|x|^2 s.t. sum(x) = 3 -> x = (1, 1, 1)
    p = _qp(np.eye(3), np.zeros(3), np.ones((1, 3)), [3.0], [3.0])
    s = solve(p)
    assert s.solved
    np.testing.assert_allclose(s.x, 1.0, atol=1e-6)


def test_primal_infeasible_certificate():
    p = _qp([[1.0]], [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0])
    s = solve(p)
    assert s.status == "infeasible" and s.certificate == "primal"


def test_dual_infeasible_certificate():
    # linear objective unbounded below along x -> +inf
    p = _qp([[0.0]], [-1.0], [[1.0]], [0.0], [np.inf])
    s = solve(p)
    assert s.status == "infeasible" and s.certificate == "dual"


def test_solve_or_raise():
    p = _qp([[1.0]], [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0])
    with pytest.raises(SolverError):
        solve_or_raise(QpSolver(), p)


def test_iteration_cap_reports_max_iter():
    rng = np.random.default_rng(0)
    p, _ = random_feasible_qp(rng, 20, 40)
    s = QpSolver(max_iter=3, polish=False, check_every=1).solve(p)
    assert s.status == "max_iter"


def test_deterministic():
    rng = np.random.default_rng(1)
    p, _ = random_feasible_qp(rng, 15, 30)
    a, b = solve(p), solve(p)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.iterations == b.iterations


def test_warm_start_reuses_solution():
    rng = np.random.default_rng(2)
    p, _ = random_feasible_qp(rng, 20, 40)
    solver = QpSolver(polish=False)
    cold = solver.solve(p)
    warm = solver.solve(p)
    assert cold.solved and warm.solved
    assert warm.iterations <= cold.iterations
    assert warm.objective == pytest.approx(cold.objective, abs=1e-5)


def test_oracle_is_self_consistent():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p, x0 = random_feasible_qp(rng)
        x, y = active_set_solve(p, x0)
        assert self_check(p, x, y)


@pytest.mark.parametrize("seed", range(10))
def test_random_qps_match_active_set_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    p, x0 = random_feasible_qp(rng)
    s = solve(p)
    x_ref, _ = active_set_solve(p, x0)
    assert s.solved
    rp, rd = kkt_residuals(p, s.x, s.y)
    assert rp <= 1e-6 and rd <= 1e-6
    assert complementarity_residual(p, s.x, s.y) <= 1e-6
    assert abs(s.objective - p.objective(x_ref)) <= 1e-6


def test_objective_not_above_feasible_points():
    rng = np.random.default_rng(4)
    for _ in range(5):
        p, x0 = random_feasible_qp(rng)
        s = solve(p)
        assert s.objective <= p.objective(x0) + 1e-6
