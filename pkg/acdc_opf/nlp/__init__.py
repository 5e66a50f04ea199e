from .check import DerivativeReport, check_derivatives, interior_points  # noqa: F401
from .ipm import solve  # noqa: F401
from .problem import (  # noqa: F401
    KktResiduals,
    NlpProblem,
    NlpSolution,
    SolverOptions,
    SolverStatus,
)
