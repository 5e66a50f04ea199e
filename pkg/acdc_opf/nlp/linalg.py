"""
Newton systems of the interior-point method.

Solves the symmetric indefinite system::

    [ M + dw*I    J'    ] [dx  ]   [rx]
    [ J         -dc*I   ] [dlam] = [rl]

where M is n x n and J has one row per equality. The regularization dw is
increased geometrically until the matrix has inertia (n, m, 0).

Below `dense_threshold` variables the matrix is factorized with a dense
Bunch-Kaufman LDL' and the step is solved from those factors. Above it a
sparse LU restricted to diagonal pivots under a symmetric ordering is used,
which is an LDL' factorization with D = diag(U); its inertia is read from the
signs of D. When SuperLU still pivots off the diagonal the inertia is
unknown and a curvature test on the computed step stands in for it.
"""

import logging
import warnings
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from ..helper.exception import SolverError

logger = logging.getLogger(__name__)

DELTA_W_FIRST = 1e-4
DELTA_W_MIN = 1e-20
DELTA_W_MAX = 1e40
DELTA_C = 1e-8
K_W_DECREASE = 1 / 3
K_W_INCREASE = 8.0
K_W_INCREASE_FIRST = 100.0
CURVATURE = 1e-12
ZERO_PIVOT = 1e-12


class NewtonStep(NamedTuple):
    dx: np.ndarray
    dlam: np.ndarray
    delta_w: float
    delta_c: float


def kkt_matrix(
    M: sparse.spmatrix, J: sparse.spmatrix, delta_w: float, delta_c: float
) -> sparse.csc_matrix:
    n, m = M.shape[0], J.shape[0]
    top = M + delta_w * sparse.identity(n, format="csr")
    if m == 0:
        return sparse.csc_matrix(top)
    bottom = -delta_c * sparse.identity(m, format="csr")
    return sparse.bmat([[top, J.T], [J, bottom]], format="csc")


def _count(eig: np.ndarray, size: int) -> Tuple[int, int, int]:
    pos = int(np.sum(eig > ZERO_PIVOT))
    neg = int(np.sum(eig < -ZERO_PIVOT))
    return pos, neg, size - pos - neg


def _block_eigenvalues(d: np.ndarray) -> np.ndarray:
    """Eigenvalues of the 1x1 and 2x2 diagonal blocks of an LDL' factor"""
    out = []
    i, size = 0, d.shape[0]
    while i < size:
        if i + 1 < size and d[i + 1, i] != 0.0:
            out.extend(np.linalg.eigvalsh(d[i : i + 2, i : i + 2]))
            i += 2
        else:
            out.append(d[i, i])
            i += 1
    return np.array(out, dtype=float)


def inertia(K: np.ndarray) -> Tuple[int, int, int]:
    """(positive, negative, zero) eigenvalue counts of a symmetric matrix"""
    if K.shape[0] == 0:
        return 0, 0, 0
    _, d, _ = scipy.linalg.ldl(K)
    # Sylvester's law of inertia
    return _count(_block_eigenvalues(d), K.shape[0])


def _block_solve(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    size = d.shape[0]
    ab = np.zeros((3, size))
    ab[0, 1:] = np.diagonal(d, 1)
    ab[1] = np.diagonal(d)
    ab[2, :-1] = np.diagonal(d, -1)
    return scipy.linalg.solve_banded((1, 1), ab, y)


def _dense_attempt(K, rhs, n, m):
    Kd = K.toarray()
    lu, d, perm = scipy.linalg.ldl(Kd)
    pos, neg, zero = _count(_block_eigenvalues(d), Kd.shape[0])
    if zero:
        return None, True
    if pos != n or neg != m:
        return None, False
    L = lu[perm]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        try:
            y = scipy.linalg.solve_triangular(
                L, rhs[perm], lower=True, unit_diagonal=True
            )
            w = _block_solve(d, y)
            u = scipy.linalg.solve_triangular(
                L.T, w, lower=False, unit_diagonal=True
            )
        except (np.linalg.LinAlgError, ValueError):
            return None, True
    sol = np.empty_like(u)
    sol[perm] = u
    if not np.all(np.isfinite(sol)):
        return None, True
    return sol, False


def sparse_inertia(lu) -> Optional[Tuple[int, int, int]]:
    """
    Inertia of a matrix factorized by `symmetric_lu`, None when SuperLU
    had to pivot off the diagonal.
    """
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    diag = lu.U.diagonal()
    return _count(diag, len(diag))


def symmetric_lu(K: sparse.csc_matrix):
    return splinalg.splu(
        K,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )


def _sparse_attempt(K, rhs, n, m, M, delta_w):
    try:
        lu = symmetric_lu(K)
    except RuntimeError:
        return None, True
    counts = sparse_inertia(lu)
    if counts is not None:
        pos, neg, zero = counts
        if zero:
            return None, True
        if pos != n or neg != m:
            return None, False
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        return None, True
    if counts is None:
        dx = sol[:n]
        curvature = dx @ (M @ dx) + delta_w * (dx @ dx)
        if curvature < CURVATURE * (dx @ dx):
            return None, False
    return sol, False


class KktSolver:
    """Keeps the last regularization between Newton steps of one solve"""

    def __init__(self, dense_threshold: int = 200):
        self.dense_threshold = dense_threshold
        self.delta_w_last = 0.0

    def solve(
        self, M: sparse.spmatrix, J: sparse.spmatrix, rx: np.ndarray, rl: np.ndarray
    ) -> NewtonStep:
        n, m = M.shape[0], J.shape[0]
        dense = n < self.dense_threshold
        rhs = np.concatenate([rx, rl])
        delta_w, delta_c = 0.0, 0.0
        while True:
            K = kkt_matrix(M, J, delta_w, delta_c)
            if dense:
                sol, singular = _dense_attempt(K, rhs, n, m)
            else:
                sol, singular = _sparse_attempt(K, rhs, n, m, M, delta_w)
            if sol is not None:
                if delta_w > 0:
                    self.delta_w_last = delta_w
                return NewtonStep(sol[:n], sol[n:], delta_w, delta_c)
            if singular and m and delta_c == 0.0:
                delta_c = DELTA_C
            if delta_w == 0.0:
                if self.delta_w_last == 0.0:
                    delta_w = DELTA_W_FIRST
                else:
                    delta_w = max(DELTA_W_MIN, K_W_DECREASE * self.delta_w_last)
            elif self.delta_w_last == 0.0:
                delta_w *= K_W_INCREASE_FIRST
            else:
                delta_w *= K_W_INCREASE
            if delta_w > DELTA_W_MAX:
                raise SolverError(
                    "Newton system could not be regularized (n={}, m={})", n, m
                )
            logger.debug("regularized Newton system: dw=%.3e dc=%.1e", delta_w, delta_c)
