import numpy as np
import pytest
from scipy import sparse

from acdc_opf.nlp import (
    NlpProblem,
    SolverOptions,
    SolverStatus,
    check_derivatives,
    interior_points,
    solve,
)
from acdc_opf.nlp.linalg import (
    DELTA_C,
    KktSolver,
    inertia,
    kkt_matrix,
    sparse_inertia,
    symmetric_lu,
)
from acdc_opf.opf import OpfModel

INF = np.inf


def square(x):
    return float(x[0] ** 2), np.array([2 * x[0]])


def square_hessian(x, lam, mu, cost_mult=1.0):
    return sparse.csr_matrix([[2.0 * cost_mult]])


def disc_problem(hessian: bool = True) -> NlpProblem:
    """min -x - y  s.t.  x^2 + y^2 <= 1"""

    def objective(x):
        return float(-x[0] - x[1]), np.array([-1.0, -1.0])

    def inequalities(x):
        return (
            np.array([x[0] ** 2 + x[1] ** 2 - 1]),
            sparse.csr_matrix([[2 * x[0], 2 * x[1]]]),
        )

    def lagrangian_hessian(x, lam, mu, cost_mult=1.0):
        return sparse.csr_matrix(2 * mu[0] * np.eye(2))

    return NlpProblem(
        objective=objective,
        x0=np.zeros(2),
        lower=np.full(2, -INF),
        upper=np.full(2, INF),
        inequalities=inequalities,
        hessian=lagrangian_hessian if hessian else None,
        name="disc",
    )


def test10_bound():
    """min x^2 s.t. x >= 1"""
    p = NlpProblem(
        objective=square,
        x0=np.array([3.0]),
        lower=np.array([1.0]),
        upper=np.array([INF]),
        hessian=square_hessian,
    )
    sol = solve(p)
    assert sol.status == SolverStatus.CONVERGED
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.mu_lower[0] == pytest.approx(2.0, rel=1e-6)
    assert sol.kkt.max() < 1e-8


def test11_inequality():
    """min x^2 s.t. 1 - x <= 0"""
    p = NlpProblem(
        objective=square,
        x0=np.array([3.0]),
        lower=np.array([-INF]),
        upper=np.array([INF]),
        inequalities=lambda x: (np.array([1 - x[0]]), sparse.csr_matrix([[-1.0]])),
        hessian=square_hessian,
    )
    sol = solve(p)
    assert sol.converged
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.mu[0] == pytest.approx(2.0, rel=1e-6)


@pytest.mark.parametrize("hessian", [True, False])
def test20_disc(hessian):
    sol = solve(disc_problem(hessian))
    assert sol.converged
    np.testing.assert_allclose(sol.x, [2 ** -0.5, 2 ** -0.5], atol=1e-6)
    # stationarity: -1 + 2 mu x = 0
    assert sol.mu[0] == pytest.approx(2 ** -0.5, rel=1e-5)


def test21_equality_and_fixed():
    """min (x - 2)^2 + (y - 2)^2  s.t.  x + y = 1, z fixed at 0.5"""

    def objective(x):
        d = x - np.array([2.0, 2.0, 0.0])
        d[2] = 0.0
        return float(d @ d), 2 * d

    p = NlpProblem(
        objective=objective,
        x0=np.zeros(3),
        lower=np.array([-INF, -INF, 0.5]),
        upper=np.array([INF, INF, 0.5]),
        equalities=lambda x: (
            np.array([x[0] + x[1] - 1]),
            sparse.csr_matrix([[1.0, 1.0, 0.0]]),
        ),
        hessian=lambda x, lam, mu, c=1.0: sparse.diags([2 * c, 2 * c, 0.0]),
    )
    sol = solve(p)
    assert sol.converged
    np.testing.assert_allclose(sol.x, [0.5, 0.5, 0.5], atol=1e-7)
    assert sol.lam[0] == pytest.approx(3.0, rel=1e-6)


def test30_projected_gradient_oracle():
    """Box-constrained convex quadratic against projected gradient descent"""
    Q = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    c = np.array([-8.0, 3.0, -1.0])
    lo, hi = np.array([0.0, 0.0, -1.0]), np.array([1.5, 2.0, 1.0])

    def objective(x):
        return float(0.5 * x @ Q @ x + c @ x), Q @ x + c

    p = NlpProblem(
        objective=objective,
        x0=np.zeros(3),
        lower=lo,
        upper=hi,
        hessian=lambda x, lam, mu, m=1.0: sparse.csr_matrix(m * Q),
    )
    sol = solve(p)

    x = np.zeros(3)
    step = 1 / np.linalg.eigvalsh(Q).max()
    for _ in range(5000):
        x = np.clip(x - step * (Q @ x + c), lo, hi)
    assert sol.converged
    assert sol.objective == pytest.approx(objective(x)[0], abs=1e-7)
    np.testing.assert_allclose(sol.x, x, atol=1e-6)


def test40_merit_decreases(case):
    sol = solve(OpfModel(case("nine_bus")).problem())
    assert sol.converged
    accepted = [it for it in sol.history if it.armijo]
    assert accepted
    for it in accepted:
        assert it.merit_after <= it.merit_before
        assert not it.forced
    assert len(sol.history) == sol.iterations


def test41_max_iter():
    sol = solve(disc_problem(), SolverOptions(max_iter=2))
    assert sol.status == SolverStatus.MAX_ITER
    assert sol.iterations == 2
    assert not sol.acceptable(1e-12)


def test42_infeasible():
    """x <= -1 and x >= 1"""
    p = NlpProblem(
        objective=square,
        x0=np.zeros(1),
        lower=np.array([1.0]),
        upper=np.array([INF]),
        inequalities=lambda x: (np.array([x[0] + 1]), sparse.csr_matrix([[1.0]])),
        hessian=square_hessian,
    )
    sol = solve(p, SolverOptions(max_iter=100))
    assert not sol.converged
    assert not sol.acceptable(1e-6)


def test50_warm_start(case):
    p = OpfModel(case("nine_bus")).problem()
    cold = solve(p)
    warm = solve(p, warm=cold)
    assert warm.converged
    assert warm.warm
    assert warm.iterations <= cold.iterations
    assert warm.objective == pytest.approx(cold.objective, rel=1e-8)


def test60_derivative_check():
    report = check_derivatives(disc_problem(), count=20, seed=1)
    assert report.points == 20
    assert set(report.errors) == {"gradient", "inequalities", "hessian"}
    assert report.ok(1e-5)


def test61_derivative_check_catches_errors():
    p = disc_problem()

    def objective(x):
        return float(-x[0] - x[1]), np.array([-1.0, 1.0])

    wrong = p._replace(objective=objective)
    assert not check_derivatives(wrong, count=3).ok(1e-5)


def test62_interior_points():
    p = NlpProblem(
        objective=square,
        x0=np.array([0.0, 5.0, 0.0]),
        lower=np.array([0.0, -INF, 2.0]),
        upper=np.array([1.0, INF, 2.0]),
    )
    points = interior_points(p, 10, seed=3)
    assert points.shape == (10, 3)
    assert np.all((points[:, 0] > 0) & (points[:, 0] < 1))
    np.testing.assert_array_equal(points[:, 2], 2.0)
    np.testing.assert_array_equal(points, interior_points(p, 10, seed=3))


@pytest.mark.parametrize("name", ["nine_bus", "acdc_2r", "fifteen_bus_3r"])
def test70_sparse_newton_systems(case, name):
    p = OpfModel(case(name)).problem()
    dense = solve(p)
    factored = solve(p, SolverOptions(dense_threshold=0))
    assert dense.converged and factored.converged
    assert factored.objective == pytest.approx(dense.objective, rel=1e-8)
    np.testing.assert_allclose(factored.x, dense.x, atol=1e-6)


def test71_inertia():
    M = sparse.diags([2.0, -1.0, 3.0], format="csr")
    J = sparse.csr_matrix([[1.0, 1.0, 0.0]])
    K = kkt_matrix(M, J, 0.0, 0.0)
    assert inertia(K.toarray()) == (3, 1, 0)
    # a nonzero lower diagonal lets the sparse factorization keep diagonal pivots
    K = kkt_matrix(M, J, 0.0, DELTA_C)
    assert sparse_inertia(symmetric_lu(K)) == (3, 1, 0)
    K = kkt_matrix(M, J, 0.0, DELTA_C).toarray()
    K[:3, :3] = -K[:3, :3]
    assert inertia(K) == (1, 3, 0)
    assert sparse_inertia(symmetric_lu(sparse.csc_matrix(K))) == (1, 3, 0)


def test72_newton_step():
    M = sparse.diags([2.0, -1.0, 3.0], format="csr")
    J = sparse.csr_matrix([[1.0, 1.0, 0.0]])
    rx, rl = np.array([1.0, 2.0, 3.0]), np.array([0.5])
    expected = np.linalg.solve(kkt_matrix(M, J, 0.0, 0.0).toarray(), np.r_[rx, rl])
    for threshold in (200, 0):
        step = KktSolver(threshold).solve(M, J, rx, rl)
        assert step.delta_w == 0.0
        np.testing.assert_allclose(np.r_[step.dx, step.dlam], expected)
