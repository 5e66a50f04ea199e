"""
Problem and result types of the nonlinear programming engine.

The engine minimizes ``f(x)`` subject to ``g(x) = 0``, ``h(x) <= 0`` and
``lower <= x <= upper``. Jacobians are returned with one row per constraint.
"""

from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import sparse

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]
Constraints = Callable[[np.ndarray], Tuple[np.ndarray, sparse.spmatrix]]
# hessian(x, lam, mu, cost_mult) of cost_mult * f + lam'g + mu'h
Hessian = Callable[[np.ndarray, np.ndarray, np.ndarray, float], sparse.spmatrix]


class NlpProblem(NamedTuple):
    """
    objective: x -> (f, gradient)
    x0: starting point, moved inside the bounds by the solver when needed
    lower, upper: variable bounds, +-inf when absent; lower == upper fixes
        the variable
    equalities: x -> (g, dg) or None
    inequalities: x -> (h, dh) or None
    hessian: Hessian of the Lagrangian or None for the quasi-Newton fallback
    """

    objective: Objective
    x0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    equalities: Optional[Constraints] = None
    inequalities: Optional[Constraints] = None
    hessian: Optional[Hessian] = None
    name: str = "nlp"

    @property
    def n(self) -> int:
        return len(self.x0)


class SolverStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


class SolverOptions(NamedTuple):
    """
    tol: bound on the normalized stationarity, feasibility, complementarity
        and cost-change measures
    max_iter: iteration limit
    acceptable_tol: a point stopped by the iteration limit whose measures are
        all below this value is usable by callers that tolerate it
    xi: fraction-to-boundary parameter
    sigma: centering parameter of the barrier update
    z0: initial slack and inequality multiplier value on cold starts
    push: relative distance used to move x0 inside its bounds on cold starts
    warm_push: same for warm starts, also the floor for slacks and multipliers
    line_search: backtracking on the barrier merit function
    armijo: sufficient decrease parameter
    max_halvings: step halvings before a forced step is taken
    dense_threshold: problems with fewer variables use dense factorizations
    max_multiplier: multipliers above this value flag an infeasible problem
    alpha_min: shorter steps end the solve with a numerical failure
    """

    tol: float = 1e-8
    max_iter: int = 300
    acceptable_tol: float = 1e-6
    xi: float = 0.99995
    sigma: float = 0.1
    z0: float = 1.0
    push: float = 1e-2
    warm_push: float = 1e-4
    line_search: bool = True
    armijo: float = 1e-4
    max_halvings: int = 10
    dense_threshold: int = 200
    max_multiplier: float = 1e12
    alpha_min: float = 1e-14


class KktResiduals(NamedTuple):
    stationarity: float
    feasibility: float
    complementarity: float
    cost: float

    def max(self) -> float:
        return max(self)


class IterationLog(NamedTuple):
    iteration: int
    objective: float
    kkt: KktResiduals
    gamma: float
    alpha_p: float
    alpha_d: float
    merit_before: float
    merit_after: float
    armijo: bool
    forced: bool
    delta_w: float


class NlpSolution(NamedTuple):
    """
    lam, mu: multipliers of the problem's own equalities and inequalities
    mu_lower, mu_upper: multipliers of the variable bounds (fixed variables
        report theirs as mu_upper - mu_lower)
    lam_all, mu_all, slack: internal multipliers and slacks, reused on warm
        starts
    """

    x: np.ndarray
    objective: float
    status: SolverStatus
    kkt: KktResiduals
    iterations: int
    lam: np.ndarray
    mu: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    lam_all: np.ndarray
    mu_all: np.ndarray
    slack: np.ndarray
    history: List[IterationLog] = []
    warm: bool = False

    @property
    def converged(self) -> bool:
        return self.status == SolverStatus.CONVERGED

    def acceptable(self, tol: float) -> bool:
        return self.converged or (
            self.status == SolverStatus.MAX_ITER and self.kkt.max() <= tol
        )

    @property
    def forced_steps(self) -> int:
        return sum(1 for it in self.history if it.forced)

    def to_json(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.objective,
            "iterations": self.iterations,
            "kkt": self.kkt._asdict(),
            "warm": self.warm,
        }
