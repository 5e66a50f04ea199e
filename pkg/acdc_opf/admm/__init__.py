from .config import AdmmConfig  # noqa: F401
from .coordinator import AdmmResult, run, solve_region  # noqa: F401
from .state import MISMATCH_LABELS, IterationTrace, RegionState  # noqa: F401
from .transport import InProcessTransport, SocketTransport  # noqa: F401
from .updates import (  # noqa: F401
    Message,
    augment_subproblem,
    broadcast,
    consensus_target,
    global_residual,
    global_residual_from_messages,
    initial_states,
    update_duals,
    update_penalty,
    update_z,
)
