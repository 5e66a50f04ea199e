import logging
from typing import Optional

from ..helper.exception import InfeasibleError, SolverError
from ..network import Network
from ..nlp import SolverOptions, SolverStatus, solve
from .model import OpfModel, assemble  # noqa: F401
from .powerflow import PowerFlowResult, newton_power_flow  # noqa: F401
from .solution import (  # noqa: F401
    BalanceResidual,
    OpfSolution,
    RegionBalance,
    SolutionComparison,
    TieFlow,
    compare_solutions,
    converter_loss,
    evaluate_balance,
    interpret,
    net_interchange,
    objective_value,
    optimality_gap,
    region_balance,
    tie_flows,
)
from .variables import OpfVariableMap  # noqa: F401

logger = logging.getLogger(__name__)


def solve_central(
    net: Network, options: Optional[SolverOptions] = None
) -> OpfSolution:
    """
    Solve the OPF of the whole network.

    Raises
    ------
    InfeasibleError
        structurally infeasible network or infeasibility detected by the
        solver
    SolverError
        numerical failure, or the iteration limit hit far from optimality
    """
    options = options or SolverOptions()
    model = OpfModel(net)
    model.check_structure()
    sol = solve(model.problem(), options)
    if sol.status == SolverStatus.INFEASIBLE:
        raise InfeasibleError(
            "OPF of '{}' looks infeasible after {} iterations",
            net.name or "network",
            sol.iterations,
        )
    if not sol.acceptable(options.acceptable_tol):
        raise SolverError(
            "OPF of '{}' ended with status {} (kkt {:.2e})",
            net.name or "network",
            sol.status.value,
            sol.kkt.max(),
        )
    if not sol.converged:
        logger.warning(
            "OPF of '%s' stopped at the iteration limit with kkt %.2e",
            net.name or "network",
            sol.kkt.max(),
        )
    logger.info(
        "central OPF of '%s': %s after %d iterations, objective %.6f €/h",
        net.name or "network",
        sol.status.value,
        sol.iterations,
        sol.objective,
    )
    return interpret(model, sol)
