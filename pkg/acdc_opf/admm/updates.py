"""
The per-iteration steps of the consensus ADMM: augmented regional
problems, message broadcast, consensus targets, dual and penalty updates.

Consensus targets are kept in the raw units of the coupled variable, so the
penalty of local row j reads ``rho/2 * w_j * (x[col_j] - z_j)^2`` and its
dual term ``lam_j * coef_j * x[col_j]``.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import sparse

from ..helper.exception import StaleMessageError, TransportError
from ..network import BusKind
from ..nlp.problem import NlpProblem
from ..opf.solution import OpfSolution
from ..partition import (
    CouplingConstraint,
    Partition,
    RegionalProblem,
    consensus_multipliers,
)
from .config import AdmmConfig
from .state import MISMATCH_LABELS, RegionState

logger = logging.getLogger(__name__)


class Message(NamedTuple):
    """Boundary values sent by one region to its neighbour across a tie"""

    iteration: int
    sender: str
    receiver: str
    tie: int
    tag: str
    values: Tuple[float, ...]


def local_constraints(part: Partition, region: str) -> List[CouplingConstraint]:
    """Coupling rows of a region, in local row order"""
    rp = part.regions[region]
    return [part.constraints[int(row)] for row in rp.rows]


def row_weights(part: Partition, region: str, cfg: AdmmConfig) -> np.ndarray:
    out = []
    for c in local_constraints(part, region):
        if c.is_voltage:
            out.append(cfg.w_voltage)
        elif c.bus_kind == BusKind.DC:
            out.append(cfg.w_power_dc)
        else:
            out.append(cfg.w_power_ac)
    return np.array(out, dtype=float)


def augment_subproblem(
    rp: RegionalProblem,
    st: RegionState,
    weights: np.ndarray,
    x0: Optional[np.ndarray] = None,
) -> NlpProblem:
    """
    Regional OPF plus ``lam' A_k x + rho/2 |A_k x - z|_W^2``; gauges
    follow z.
    """
    k = len(rp.rows)
    if len(st.z) != k or len(st.lam) != k or len(weights) != k:
        raise ValueError(
            "region {}: state has {} targets, {} multipliers and {} weights "
            "for {} coupling rows".format(
                rp.region, len(st.z), len(st.lam), len(weights), k
            )
        )
    base = rp.problem(z=st.z, x0=x0)
    n = base.n
    cols, coefs = rp.cols, rp.coefs
    z, lam, rho = np.asarray(st.z), np.asarray(st.lam), st.rho
    linear = lam * coefs
    curvature = rho * weights

    def objective(x):
        f, df = base.objective(x)
        d = x[cols] - z
        f = f + float(linear @ x[cols]) + 0.5 * float(curvature @ (d * d))
        df = np.array(df, dtype=float)
        np.add.at(df, cols, linear + curvature * d)
        return f, df

    def hessian(x, lam_g, mu, cost_mult=1.0):
        H = base.hessian(x, lam_g, mu, cost_mult)
        extra = sparse.csr_matrix(
            (cost_mult * curvature, (cols, cols)), shape=(n, n)
        )
        return H + extra

    return base._replace(
        objective=objective, hessian=hessian, name=base.name + ":augmented"
    )


def broadcast(
    part: Partition, states: Dict[str, RegionState], iteration: int
) -> Dict[str, List[Message]]:
    """Outgoing messages of every region: one V and one S message per tie"""
    out: Dict[str, List[Message]] = {}
    for region, st in states.items():
        rp = part.regions[region]
        slots: Dict[Tuple[int, str], Dict[int, float]] = {}
        others: Dict[int, str] = {}
        for j, c in enumerate(local_constraints(part, region)):
            slots.setdefault((c.tie, c.tag), {})[c.position] = float(
                st.x[rp.cols[j]]
            )
            others[c.tie] = c.region_b if c.region_a == region else c.region_a
        out[region] = [
            Message(
                iteration=iteration,
                sender=region,
                receiver=others[tie],
                tie=tie,
                tag=tag,
                values=tuple(v for _, v in sorted(values.items())),
            )
            for (tie, tag), values in slots.items()
        ]
    return out


def consensus_target(is_voltage: bool, own: float, other: float) -> float:
    """Mean of both voltages, half-difference of both injections"""
    if is_voltage:
        return 0.5 * (own + other)
    return 0.5 * (own - other)


def _by_slot(
    messages: List[Message], iteration: int
) -> Dict[Tuple[int, str], Message]:
    out = {}
    for m in messages:
        if m.iteration != iteration:
            raise StaleMessageError(
                "message of iteration {} from region {} received in iteration {}",
                m.iteration,
                m.sender,
                iteration,
            )
        out[(m.tie, m.tag)] = m
    return out


def update_z(
    part: Partition,
    region: str,
    own: List[Message],
    inbox: List[Message],
    iteration: int,
) -> np.ndarray:
    """
    Consensus targets of a region computed from its own messages and those
    received from its neighbours in the same iteration.
    """
    mine = _by_slot(own, iteration)
    theirs = _by_slot(inbox, iteration)
    rows = local_constraints(part, region)
    z = np.zeros(len(rows))
    for j, c in enumerate(rows):
        slot = (c.tie, c.tag)
        if slot not in mine or slot not in theirs:
            raise TransportError(
                "region {}: no {} message for tie {} in iteration {}",
                region,
                c.tag,
                c.tie,
                iteration,
            )
        z[j] = consensus_target(
            c.is_voltage,
            mine[slot].values[c.position],
            theirs[slot].values[c.position],
        )
    return z


def local_residual(rp: RegionalProblem, st: RegionState) -> float:
    if not len(rp.rows):
        return 0.0
    return float(np.max(np.abs(rp.coefs * (st.x[rp.cols] - st.z))))


def update_duals(
    rp: RegionalProblem, st: RegionState, weights: np.ndarray
) -> RegionState:
    """lam += rho * w * A_k (x - z)"""
    lam = st.lam + st.rho * weights * rp.coefs * (st.x[rp.cols] - st.z)
    return st._replace(lam=lam)


def update_penalty(
    rp: RegionalProblem, st: RegionState, cfg: AdmmConfig
) -> RegionState:
    """
    Keep rho while the local residual shrinks by theta, raise it by tau
    otherwise. The residual becomes the new reference.
    """
    gamma = local_residual(rp, st)
    power = st.rho_power
    if not gamma <= cfg.theta * st.gamma:
        power += 1
    return st._replace(rho=cfg.rho(power), rho_power=power, gamma=gamma)


def global_residual(part: Partition, states: Dict[str, RegionState]) -> float:
    """|sum_k A_k x_k|_inf"""
    r = part.residual({name: st.x for name, st in states.items()})
    return float(np.max(np.abs(r))) if len(r) else 0.0


def global_residual_from_messages(
    part: Partition, messages: Dict[str, List[Message]]
) -> float:
    """Same quantity as `global_residual`, from broadcast values only"""
    slots: Dict[Tuple[str, int, str], Message] = {}
    for outgoing in messages.values():
        for m in outgoing:
            slots[(m.sender, m.tie, m.tag)] = m
    worst = 0.0
    for c in part.constraints:
        a = slots[(c.region_a, c.tie, c.tag)].values[c.position]
        b = slots[(c.region_b, c.tie, c.tag)].values[c.position]
        worst = max(worst, abs(a + c.coef_b * b))
    return worst


def mismatch_by_kind(
    part: Partition, states: Dict[str, RegionState]
) -> Dict[str, float]:
    r = part.residual({name: st.x for name, st in states.items()})
    out = {label: 0.0 for label in MISMATCH_LABELS}
    for c in part.constraints:
        out[c.label] = max(out[c.label], abs(float(r[c.row])))
    return out


def initial_states(
    part: Partition,
    cfg: AdmmConfig,
    seed: Optional[Dict[str, OpfSolution]] = None,
) -> Dict[str, RegionState]:
    """
    Zero multipliers, infinite residuals and targets read from a flat start.
    A seed (regional images of a known solution) sets x and z to it and the
    multipliers to their sign-constrained least-squares estimates.
    """
    if seed is not None:
        xs = {r: seed[r].to_vector(rp.model) for r, rp in part.regions.items()}
        lams = consensus_multipliers(part, xs)
    else:
        xs = {r: rp.model.flat_start() for r, rp in part.regions.items()}
        lams = {r: np.zeros(len(rp.rows)) for r, rp in part.regions.items()}
    return {
        r: RegionState(
            region=r,
            x=xs[r],
            z=xs[r][rp.cols].copy(),
            lam=lams[r],
            rho=cfg.rho(0),
        )
        for r, rp in part.regions.items()
    }
