"""
Primal-dual interior-point method for smooth nonlinear programs.

Variable bounds are turned into inequality rows and fixed variables
(``lower == upper``) into equality rows, then the method follows the
classic primal-dual scheme: slacks ``z > 0`` with ``h(x) + z = 0``, a Newton
step on the perturbed KKT conditions, a fraction-to-boundary rule for
``z`` and ``mu`` and a barrier parameter driven down by
``gamma = sigma * z'mu / niq``. Accepted steps decrease the merit function::

    phi(x, z) = f(x) - gamma * sum(log z) + nu * (|g(x)|_1 + |h(x) + z|_1)
"""

import logging
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse

from ..helper.exception import SolverError
from .linalg import KktSolver
from .problem import (
    IterationLog,
    KktResiduals,
    NlpProblem,
    NlpSolution,
    SolverOptions,
    SolverStatus,
)

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class _Point(NamedTuple):
    f: float
    df: np.ndarray
    g: np.ndarray
    G: sparse.csr_matrix
    h: np.ndarray
    H: sparse.csr_matrix


def _empty(n: int) -> sparse.csr_matrix:
    return sparse.csr_matrix((0, n))


def _stack(top: sparse.spmatrix, bottom: sparse.spmatrix) -> sparse.csr_matrix:
    if top.shape[0] == 0:
        return sparse.csr_matrix(bottom)
    if bottom.shape[0] == 0:
        return sparse.csr_matrix(top)
    return sparse.vstack([top, bottom], format="csr")


def _selector(cols: np.ndarray, sign: np.ndarray, n: int) -> sparse.csr_matrix:
    rows = np.arange(len(cols))
    return sparse.csr_matrix((sign, (rows, cols)), shape=(len(cols), n))


class _Layout:
    """Bound and fixed-variable rows appended to the problem's constraints"""

    def __init__(self, p: NlpProblem, eps: float = EPS):
        n = p.n
        self.p = p
        self.n = n
        lo = np.asarray(p.lower, dtype=float)
        hi = np.asarray(p.upper, dtype=float)
        if lo.shape != (n,) or hi.shape != (n,):
            raise SolverError("{}: bounds must have length {}", p.name, n)
        if np.any(lo > hi):
            raise SolverError("{}: lower bound above upper bound", p.name)
        self.lo, self.hi = lo, hi
        tight = eps * np.maximum(1.0, np.abs(lo))
        fixed = np.isfinite(lo) & (np.abs(hi - lo) <= tight)
        self.fixed = np.flatnonzero(fixed)
        self.ilo = np.flatnonzero(np.isfinite(lo) & ~fixed)
        self.ihi = np.flatnonzero(np.isfinite(hi) & ~fixed)
        self.Ae = _selector(self.fixed, np.ones(len(self.fixed)), n)
        # upper rows first: x - hi <= 0, then lo - x <= 0
        cols = np.concatenate([self.ihi, self.ilo])
        sign = np.concatenate([np.ones(len(self.ihi)), -np.ones(len(self.ilo))])
        self.Ai = _selector(cols, sign, n)
        self.bi = np.concatenate([hi[self.ihi], -lo[self.ilo]])
        # sizes of the problem's own blocks, known after the first evaluation
        self.neq_user = 0
        self.niq_user = 0

    def evaluate(self, x: np.ndarray) -> _Point:
        p, n = self.p, self.n
        f, df = p.objective(x)
        if p.equalities is not None:
            gu, Gu = p.equalities(x)
            Gu = sparse.csr_matrix(Gu)
        else:
            gu, Gu = np.zeros(0), _empty(n)
        if p.inequalities is not None:
            hu, Hu = p.inequalities(x)
            Hu = sparse.csr_matrix(Hu)
        else:
            hu, Hu = np.zeros(0), _empty(n)
        self.neq_user, self.niq_user = len(gu), len(hu)
        fixed = x[self.fixed] - self.lo[self.fixed]
        g = np.concatenate([np.asarray(gu, dtype=float), fixed])
        h = np.concatenate([np.asarray(hu, dtype=float), self.Ai @ x - self.bi])
        G = _stack(Gu, self.Ae)
        H = _stack(Hu, self.Ai)
        return _Point(float(f), np.asarray(df, dtype=float), g, G, h, H)

    def push_inside(self, x: np.ndarray, push: float) -> np.ndarray:
        """Move x strictly inside the bounds and onto fixed values"""
        x = np.array(x, dtype=float)
        lo, hi = self.lo, self.hi
        x[self.fixed] = lo[self.fixed]
        both = np.isfinite(lo) & np.isfinite(hi)
        width = np.where(both, hi - lo, np.inf)
        pl = np.minimum(push * np.maximum(1.0, np.abs(lo)), push * width)
        pu = np.minimum(push * np.maximum(1.0, np.abs(hi)), push * width)
        free = np.ones(self.n, dtype=bool)
        free[self.fixed] = False
        low = free & np.isfinite(lo)
        high = free & np.isfinite(hi)
        x[low] = np.maximum(x[low], lo[low] + pl[low])
        x[high] = np.minimum(x[high], hi[high] - pu[high])
        return x

    def split(self, lam: np.ndarray, mu: np.ndarray):
        n = self.n
        neq, niq = self.neq_user, self.niq_user
        mu_upper = np.zeros(n)
        mu_lower = np.zeros(n)
        nhi = len(self.ihi)
        mu_upper[self.ihi] = mu[niq : niq + nhi]
        mu_lower[self.ilo] = mu[niq + nhi :]
        lam_fixed = lam[neq:]
        mu_upper[self.fixed] = np.maximum(lam_fixed, 0.0)
        mu_lower[self.fixed] = np.maximum(-lam_fixed, 0.0)
        return lam[:neq], mu[:niq], mu_lower, mu_upper


def _conditions(x, z, lam, mu, pt: _Point, Lx, f_prev) -> KktResiduals:
    maxh = float(np.max(pt.h)) if len(pt.h) else 0.0
    gnorm = float(np.max(np.abs(pt.g))) if len(pt.g) else 0.0
    xnorm = float(np.max(np.abs(x))) if len(x) else 0.0
    znorm = float(np.max(z)) if len(z) else 0.0
    lnorm = float(np.max(np.abs(lam))) if len(lam) else 0.0
    mnorm = float(np.max(np.abs(mu))) if len(mu) else 0.0
    return KktResiduals(
        stationarity=float(np.max(np.abs(Lx), initial=0.0)) / (1 + max(lnorm, mnorm)),
        feasibility=max(gnorm, maxh) / (1 + max(xnorm, znorm)),
        complementarity=float(z @ mu) / (1 + xnorm),
        cost=abs(pt.f - f_prev) / (1 + abs(f_prev)),
    )


def _lagrangian_gradient(pt: _Point, lam, mu) -> np.ndarray:
    return pt.df + pt.G.T @ lam + pt.H.T @ mu


def _largest(*arrays) -> float:
    return max((float(np.max(np.abs(a))) for a in arrays if len(a)), default=0.0)


def _step_length(v: np.ndarray, dv: np.ndarray, xi: float) -> float:
    k = dv < 0
    if not np.any(k):
        return 1.0
    return min(xi * float(np.min(v[k] / -dv[k])), 1.0)


def _merit(pt: _Point, z: np.ndarray, gamma: float, nu: float) -> float:
    barrier = gamma * float(np.sum(np.log(z))) if len(z) else 0.0
    return pt.f - barrier + nu * _violation(pt, z)


def _violation(pt: _Point, z: np.ndarray) -> float:
    return float(np.sum(np.abs(pt.g)) + np.sum(np.abs(pt.h + z)))


class _Bfgs:
    """Damped BFGS approximation of the Lagrangian Hessian"""

    def __init__(self, n: int):
        self.B = np.eye(n)

    def update(self, s: np.ndarray, y: np.ndarray):
        Bs = self.B @ s
        sBs = float(s @ Bs)
        if sBs <= EPS:
            return
        sy = float(s @ y)
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1 - theta) * Bs
            sy = float(s @ y)
        self.B += np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs


def _solve(
    p: NlpProblem, opts: SolverOptions, warm: Optional[NlpSolution]
) -> NlpSolution:
    layout = _Layout(p)
    kkt = KktSolver(opts.dense_threshold)
    bfgs = _Bfgs(p.n) if p.hessian is None else None

    if warm is not None:
        x = layout.push_inside(warm.x, opts.warm_push)
    else:
        x = layout.push_inside(p.x0, opts.push)
    pt = layout.evaluate(x)
    neq, niq = len(pt.g), len(pt.h)

    if warm is not None and len(warm.lam_all) == neq and len(warm.mu_all) == niq:
        lam = np.array(warm.lam_all, dtype=float)
        z = np.maximum(-pt.h, opts.warm_push)
        mu = np.maximum(warm.mu_all, opts.warm_push)
        gamma = opts.sigma * float(z @ mu) / niq if niq else 0.0
    else:
        warm = None
        gamma = 1.0
        lam = np.zeros(neq)
        z = opts.z0 * np.ones(niq)
        k = pt.h < -opts.z0
        z[k] = -pt.h[k]
        mu = opts.z0 * np.ones(niq)
        k = gamma / z > opts.z0
        mu[k] = gamma / z[k]
    if niq == 0:
        gamma = 0.0

    nu = 0.0
    history = []
    Lx = _lagrangian_gradient(pt, lam, mu)
    cond = _conditions(x, z, lam, mu, pt, Lx, pt.f)
    status = SolverStatus.MAX_ITER
    it = 0

    def done(c: KktResiduals) -> bool:
        return c.max() < opts.tol

    if done(cond):
        status = SolverStatus.CONVERGED

    while status == SolverStatus.MAX_ITER and it < opts.max_iter:
        it += 1
        if bfgs is None:
            lam_u, mu_u = lam[: layout.neq_user], mu[: layout.niq_user]
            Lxx = sparse.csr_matrix(p.hessian(x, lam_u, mu_u, 1.0))
        else:
            Lxx = sparse.csr_matrix(bfgs.B)

        zinv = 1.0 / z if niq else np.zeros(0)
        dh_zinv = pt.H.T @ sparse.diags(zinv) if niq else sparse.csr_matrix((p.n, 0))
        M = Lxx + dh_zinv @ sparse.diags(mu) @ pt.H if niq else Lxx
        N = Lx + (dh_zinv @ (mu * pt.h + gamma) if niq else 0.0)
        try:
            step = kkt.solve(sparse.csr_matrix(M), pt.G, -N, -pt.g)
        except SolverError as e:
            logger.debug("%s: %s", p.name, e)
            status = SolverStatus.NUMERICAL_FAILURE
            break
        dx, dlam = step.dx, step.dlam
        dz = -pt.h - z - pt.H @ dx
        dmu = -mu + zinv * (gamma - mu * dz) if niq else np.zeros(0)

        alpha_p = _step_length(z, dz, opts.xi)
        alpha_d = _step_length(mu, dmu, opts.xi)

        # line search on the primal step
        mult = np.concatenate([lam + dlam, mu + dmu])
        nu = max(nu, 1.1 * float(np.max(np.abs(mult), initial=0.0)) + 1.0)
        phi0 = _merit(pt, z, gamma, nu)
        slope = float(pt.df @ dx) - nu * _violation(pt, z)
        if niq:
            slope -= gamma * float(np.sum(dz / z))
        alpha = alpha_p
        armijo = False
        forced = False
        trial = None
        if opts.line_search and slope < 0:
            for _ in range(opts.max_halvings + 1):
                x_t = x + alpha * dx
                z_t = z + alpha * dz
                pt_t = layout.evaluate(x_t)
                target = phi0 + opts.armijo * alpha * slope
                if np.isfinite(pt_t.f) and _merit(pt_t, z_t, gamma, nu) <= target:
                    armijo = True
                    trial = pt_t
                    break
                alpha *= 0.5
            if not armijo:
                forced = True
                alpha = alpha_p
        if trial is None:
            trial = layout.evaluate(x + alpha * dx)
        x_new = x + alpha * dx
        z_new = z + alpha * dz
        merit_after = _merit(trial, z_new, gamma, nu)

        lam_new = lam + alpha_d * dlam
        mu_new = mu + alpha_d * dmu
        if bfgs is not None:
            y = _lagrangian_gradient(trial, lam_new, mu_new)
            y -= _lagrangian_gradient(pt, lam_new, mu_new)
            bfgs.update(x_new - x, y)

        f_prev = pt.f
        x, z, lam, mu, pt = x_new, z_new, lam_new, mu_new, trial
        gamma = opts.sigma * float(z @ mu) / niq if niq else 0.0
        Lx = _lagrangian_gradient(pt, lam, mu)
        cond = _conditions(x, z, lam, mu, pt, Lx, f_prev)
        history.append(
            IterationLog(
                iteration=it,
                objective=pt.f,
                kkt=cond,
                gamma=gamma,
                alpha_p=alpha,
                alpha_d=alpha_d,
                merit_before=phi0,
                merit_after=merit_after,
                armijo=armijo,
                forced=forced,
                delta_w=step.delta_w,
            )
        )
        logger.debug(
            "%s it %3d f=%.10g feas=%.2e grad=%.2e comp=%.2e gamma=%.2e alpha=%.2e%s",
            p.name,
            it,
            pt.f,
            cond.feasibility,
            cond.stationarity,
            cond.complementarity,
            gamma,
            alpha,
            " forced" if forced else "",
        )

        if not (np.all(np.isfinite(x)) and np.isfinite(pt.f)):
            status = SolverStatus.NUMERICAL_FAILURE
        elif done(cond):
            status = SolverStatus.CONVERGED
        elif _largest(lam, mu) > opts.max_multiplier:
            status = SolverStatus.INFEASIBLE
        elif alpha < opts.alpha_min or alpha_d < opts.alpha_min or gamma > 1.0 / EPS:
            status = SolverStatus.NUMERICAL_FAILURE

    lam_user, mu_user, mu_lower, mu_upper = layout.split(lam, mu)
    return NlpSolution(
        x=x,
        objective=pt.f,
        status=status,
        kkt=cond,
        iterations=it,
        lam=lam_user,
        mu=mu_user,
        mu_lower=mu_lower,
        mu_upper=mu_upper,
        lam_all=lam,
        mu_all=mu,
        slack=z,
        history=history,
        warm=warm is not None,
    )


def solve(
    p: NlpProblem,
    opts: Optional[SolverOptions] = None,
    warm: Optional[NlpSolution] = None,
) -> NlpSolution:
    """
    Minimize the problem

    Parameters
    ----------
    p : NlpProblem
        problem callbacks and bounds
    opts : SolverOptions
        tolerances and iteration limits, defaults when None
    warm : NlpSolution
        previous solution of a problem with the same structure; its point,
        multipliers and slacks seed the iteration. A failing warm start is
        retried from a cold start.

    Returns
    -------
    NlpSolution
        never raises on solver failures, the status tells
    """
    opts = opts or SolverOptions()
    if warm is not None:
        sol = _solve(p, opts, warm)
        if sol.acceptable(opts.acceptable_tol):
            return sol
        logger.info(
            "%s: warm start ended with %s, retrying from a cold start",
            p.name,
            sol.status.value,
        )
    sol = _solve(p, opts, None)
    logger.debug(
        "%s: %s after %d iterations, f=%.10g",
        p.name,
        sol.status.value,
        sol.iterations,
        sol.objective,
    )
    return sol
