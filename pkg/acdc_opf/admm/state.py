import math
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from ..nlp.problem import NlpSolution

# mismatch classes reported per iteration
MISMATCH_LABELS = ("AC Vmag", "AC Vang", "AC Pgen", "AC Qgen", "DC Vdc", "DC Pgen")


class RegionState(NamedTuple):
    """
    x: full regional solution of the last iteration
    z, lam: consensus targets and multipliers, one per local coupling row,
        z in the raw units of the coupled variable
    rho_power: number of penalty increases, rho = rho0 * tau ** rho_power
    gamma: local residual of the previous iteration
    solution: last NLP solution, reused for warm starts
    """

    region: str
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    rho: float
    rho_power: int = 0
    gamma: float = math.inf
    solution: Optional[NlpSolution] = None


class IterationTrace(NamedTuple):
    iteration: int
    residual: float
    objective: float
    rho: Tuple[float, ...]
    gamma: Tuple[float, ...]
    mismatch: Dict[str, float]
    nlp_iterations: Tuple[int, ...]
    timings: Dict[str, float]

    def to_json(self) -> dict:
        return self._asdict()
