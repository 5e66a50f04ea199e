"""
Iteration loop of the distributed OPF.

Every iteration solves all regional problems (in a process pool when
``workers > 1``), exchanges boundary values through the transport and,
unless the global residual is already below ``eps``, updates the
consensus targets, multipliers and penalties of every region.

Regional solves are inexact while the consensus is poor: their KKT
tolerance follows the last global residual (see `AdmmConfig.solver_tol_ratio`).

All regions live in the coordinating process. Pool workers only solve the
regional NLPs and hand their solutions back; the boundary values are then
written to the transport by the coordinator on behalf of every region, so
no region process owns a socket endpoint.
"""

import logging
import time
from multiprocessing import Pool
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..helper.exception import RegionSolveError, TransportError
from ..nlp import NlpSolution, SolverOptions, solve
from ..opf.solution import OpfSolution, interpret
from ..partition import Partition, RegionalProblem, reconstruct
from .config import AdmmConfig
from .state import IterationTrace, RegionState
from .transport import make_transport
from .updates import (
    augment_subproblem,
    broadcast,
    global_residual,
    initial_states,
    mismatch_by_kind,
    row_weights,
    update_duals,
    update_penalty,
    update_z,
)

logger = logging.getLogger(__name__)

# regional problems of the running solve, installed in every worker
_GLOBAL_PARTITION: Optional[Partition] = None


def _install(part: Partition) -> None:
    global _GLOBAL_PARTITION
    _GLOBAL_PARTITION = part


class AdmmResult(NamedTuple):
    """
    solution: merged solution of the original network, taken from the
        iterate with the smallest residual when not converged
    """

    solution: OpfSolution
    regional: Dict[str, OpfSolution]
    converged: bool
    iterations: int
    residual: float
    best_iteration: int
    trace: List[IterationTrace]
    states: Dict[str, RegionState]

    @property
    def objective(self) -> float:
        return self.solution.objective


def solve_region(
    rp: RegionalProblem,
    st: RegionState,
    weights: np.ndarray,
    options: SolverOptions,
    warm_start: bool = True,
) -> NlpSolution:
    p = augment_subproblem(rp, st, weights, x0=st.x)
    warm = st.solution if warm_start else None
    sol = solve(p, options, warm=warm)
    if not sol.acceptable(options.acceptable_tol):
        raise RegionSolveError(
            rp.region,
            "NLP ended with status {} after {} iterations (kkt {:.2e})",
            sol.status.value,
            sol.iterations,
            sol.kkt.max(),
        )
    return sol


def _solve_region(args: Tuple[str, RegionState, np.ndarray, SolverOptions, bool]):
    region, st, weights, options, warm_start = args
    return solve_region(
        _GLOBAL_PARTITION.regions[region], st, weights, options, warm_start
    )


def run(
    part: Partition,
    cfg: Optional[AdmmConfig] = None,
    seed: Optional[Dict[str, OpfSolution]] = None,
    progress: bool = False,
) -> AdmmResult:
    """
    Run the consensus ADMM until ``|sum_k A_k x_k|_inf <= eps`` or the
    iteration limit.

    Parameters
    ----------
    part : Partition
        regional problems and consensus rows
    cfg : AdmmConfig
        defaults when None
    seed : dict
        regional images of a known solution used as the starting point,
        see `split_solution`
    progress : bool
        show a progress bar

    Raises
    ------
    RegionSolveError
        a regional NLP failed; the iteration is aborted
    """
    cfg = (cfg or AdmmConfig()).validate()
    regions = list(part.regions)
    states = initial_states(part, cfg, seed)
    weights = {r: row_weights(part, r, cfg) for r in regions}
    # the first solves are exact when the start is already at consensus
    previous = global_residual(part, states)
    trace: List[IterationTrace] = []
    best: Tuple[float, int, Dict[str, RegionState]] = (np.inf, 0, states)
    converged = False
    residual = np.inf

    _install(part)
    pool = None
    if cfg.workers > 1 and len(regions) > 1:
        pool = Pool(min(cfg.workers, len(regions)), _install, (part,))
    transport = make_transport(cfg.transport, part)
    bar = tqdm(total=cfg.max_iterations, desc="admm", disable=not progress)
    it = 0
    try:
        while it < cfg.max_iterations:
            it += 1
            t0 = time.perf_counter()
            options = cfg.solver_options(previous)
            args = [
                (r, states[r], weights[r], options, cfg.warm_start) for r in regions
            ]
            if pool is not None:
                sols = pool.map(_solve_region, args)
            else:
                sols = [_solve_region(a) for a in args]
            for r, sol in zip(regions, sols):
                states[r] = states[r]._replace(x=sol.x, solution=sol)
            t1 = time.perf_counter()

            outgoing = broadcast(part, states, it)
            inbox = transport.exchange(it, outgoing)
            t2 = time.perf_counter()

            residual = global_residual(part, states)
            previous = residual
            objective = sum(
                part.regions[r].model.cost(states[r].x) for r in regions
            )
            mismatch = mismatch_by_kind(part, states)
            if residual < best[0]:
                best = (residual, it, dict(states))
            converged = residual <= cfg.eps
            if not converged:
                for r in regions:
                    rp = part.regions[r]
                    z = update_z(part, r, outgoing[r], inbox[r], it)
                    st = update_duals(rp, states[r]._replace(z=z), weights[r])
                    states[r] = update_penalty(rp, st, cfg)
            t3 = time.perf_counter()

            trace.append(
                IterationTrace(
                    iteration=it,
                    residual=residual,
                    objective=objective,
                    rho=tuple(states[r].rho for r in regions),
                    gamma=tuple(states[r].gamma for r in regions),
                    mismatch=mismatch,
                    nlp_iterations=tuple(s.iterations for s in sols),
                    timings={"solve": t1 - t0, "exchange": t2 - t1, "update": t3 - t2},
                )
            )
            logger.info(
                "admm it %d residual %.3e objective %.6f nlp tol %.1e rho max %.4g",
                it,
                residual,
                objective,
                options.tol,
                max((states[r].rho for r in regions), default=0.0),
            )
            bar.update(1)
            bar.set_postfix(residual="{:.2e}".format(residual))
            if converged:
                break
        transport.finish(converged)
    except BaseException:
        try:
            transport.finish(False)
        except (TransportError, OSError) as e:
            logger.debug("abort frame not delivered: %s", e)
        raise
    finally:
        bar.close()
        transport.close()
        if pool is not None:
            pool.close()
            pool.join()

    if not converged:
        logger.warning(
            "admm stopped after %d iterations with residual %.3e > %.3e",
            it,
            residual,
            cfg.eps,
        )
    best_residual, best_it, best_states = best
    final = states if converged else best_states
    regional = {
        r: interpret(part.regions[r].model, final[r].solution) for r in regions
    }
    merged = reconstruct(part, regional, tol=cfg.eps if converged else None)
    return AdmmResult(
        solution=merged._replace(
            status="converged" if converged else "max_iter", iterations=it
        ),
        regional=regional,
        converged=converged,
        iterations=it,
        residual=residual if converged else best_residual,
        best_iteration=it if converged else best_it,
        trace=trace,
        states=states,
    )
