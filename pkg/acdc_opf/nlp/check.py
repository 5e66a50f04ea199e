"""
Finite-difference audit of problem callbacks.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse

from .problem import NlpProblem

logger = logging.getLogger(__name__)


class DerivativeReport(NamedTuple):
    """Largest relative error per callback over all checked points"""

    points: int
    errors: Dict[str, float]

    def max(self) -> float:
        return max(self.errors.values(), default=0.0)

    def ok(self, tol: float = 1e-5) -> bool:
        return self.max() <= tol

    def to_json(self) -> dict:
        return {"points": self.points, "errors": self.errors}


def interior_points(
    p: NlpProblem, count: int, seed: int = 0, spread: float = 0.3
) -> np.ndarray:
    """
    Random points strictly inside the variable box. Bounded coordinates are
    drawn from the central 80 % of their range, unbounded ones around x0.
    """
    rng = np.random.default_rng(seed)
    lo = np.asarray(p.lower, dtype=float)
    hi = np.asarray(p.upper, dtype=float)
    x0 = np.asarray(p.x0, dtype=float)
    points = np.empty((count, p.n))
    for k in range(count):
        u = rng.uniform(0.1, 0.9, size=p.n)
        x = x0 + spread * (2 * u - 1)
        both = np.isfinite(lo) & np.isfinite(hi)
        x[both] = lo[both] + u[both] * (hi[both] - lo[both])
        only_lo = np.isfinite(lo) & ~np.isfinite(hi)
        x[only_lo] = np.maximum(x[only_lo], lo[only_lo] + spread * u[only_lo])
        only_hi = np.isfinite(hi) & ~np.isfinite(lo)
        x[only_hi] = np.minimum(x[only_hi], hi[only_hi] - spread * u[only_hi])
        points[k] = x
    return points


def _dense(m) -> np.ndarray:
    if sparse.issparse(m):
        return m.toarray()
    return np.atleast_2d(np.asarray(m, dtype=float))


def _relative(numeric: np.ndarray, analytic: np.ndarray) -> float:
    if numeric.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(numeric - analytic))) / scale


def _jacobian_fd(fun, x: np.ndarray, step: float) -> np.ndarray:
    cols = []
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = step * max(1.0, abs(x[i]))
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * e[i]))
    return np.array(cols).T


def check_derivatives(
    p: NlpProblem,
    points: Optional[Sequence[np.ndarray]] = None,
    count: int = 20,
    seed: int = 0,
    step: float = 1e-6,
) -> DerivativeReport:
    """
    Compare the analytic gradient, Jacobians and Lagrangian Hessian of a
    problem with central finite differences. The Hessian is checked with
    random multipliers.
    """
    if points is None:
        points = interior_points(p, count, seed)
    rng = np.random.default_rng(seed + 1)
    errors = {"gradient": 0.0}
    if p.equalities is not None:
        errors["equalities"] = 0.0
    if p.inequalities is not None:
        errors["inequalities"] = 0.0
    if p.hessian is not None:
        errors["hessian"] = 0.0

    for x in points:
        x = np.asarray(x, dtype=float)
        _, df = p.objective(x)
        fd = _jacobian_fd(lambda v: np.array([p.objective(v)[0]]), x, step)[0]
        errors["gradient"] = max(errors["gradient"], _relative(fd, np.asarray(df)))

        lam = np.zeros(0)
        mu = np.zeros(0)
        if p.equalities is not None:
            g, G = p.equalities(x)
            fd = _jacobian_fd(lambda v: p.equalities(v)[0], x, step)
            errors["equalities"] = max(
                errors["equalities"], _relative(fd.reshape(len(g), -1), _dense(G))
            )
            lam = rng.normal(size=len(g))
        if p.inequalities is not None:
            h, H = p.inequalities(x)
            fd = _jacobian_fd(lambda v: p.inequalities(v)[0], x, step)
            errors["inequalities"] = max(
                errors["inequalities"], _relative(fd.reshape(len(h), -1), _dense(H))
            )
            mu = rng.uniform(size=len(h))
        if p.hessian is not None:

            def lagrangian_gradient(v):
                out = np.asarray(p.objective(v)[1], dtype=float).copy()
                if p.equalities is not None:
                    out += _dense(p.equalities(v)[1]).T @ lam
                if p.inequalities is not None:
                    out += _dense(p.inequalities(v)[1]).T @ mu
                return out

            fd = _jacobian_fd(lagrangian_gradient, x, step)
            analytic = _dense(p.hessian(x, lam, mu, 1.0))
            errors["hessian"] = max(errors["hessian"], _relative(fd, analytic))

    report = DerivativeReport(points=len(points), errors=errors)
    logger.debug("%s derivative check: %s", p.name, errors)
    return report
