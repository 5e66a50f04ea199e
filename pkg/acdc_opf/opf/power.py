"""
Complex power injections and their first and second derivatives with
respect to voltage angles and magnitudes, in polar coordinates.
"""

from typing import Tuple

import numpy as np
from scipy import sparse


def _diag(v: np.ndarray) -> sparse.csr_matrix:
    return sparse.diags(v, format="csr")


def bus_injection(Y: sparse.spmatrix, V: np.ndarray) -> np.ndarray:
    return V * np.conj(Y @ V)


def dSbus_dV(
    Y: sparse.spmatrix, V: np.ndarray
) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Partial derivatives of the bus injections; returns (dS/dVa, dS/dVm)"""
    Ibus = Y @ V
    diagV = _diag(V)
    diagIbus = _diag(Ibus)
    diagVnorm = _diag(V / np.abs(V))
    dS_dVm = diagV @ (Y @ diagVnorm).conj() + diagIbus.conj() @ diagVnorm
    dS_dVa = 1j * diagV @ (diagIbus - Y @ diagV).conj()
    return sparse.csr_matrix(dS_dVa), sparse.csr_matrix(dS_dVm)


def d2Sbus_dV2(Y: sparse.spmatrix, V: np.ndarray, lam: np.ndarray):
    """
    Second derivatives of lam' * Sbus; returns the complex blocks
    (Gaa, Gav, Gva, Gvv) in angle / magnitude order.
    """
    n = len(V)
    Ibus = Y @ V
    diaglam = _diag(lam)
    diagV = _diag(V)
    A = _diag(lam * V)
    B = Y @ diagV
    C = A @ B.conj()
    D = Y.conj().T @ diagV
    E = diagV.conj() @ (D @ diaglam - _diag(D @ lam))
    F = C - A @ _diag(np.conj(Ibus))
    G = _diag(np.ones(n) / np.abs(V))
    Gaa = E + F
    Gva = 1j * G @ (E - F)
    Gav = Gva.T
    Gvv = G @ (C + C.T) @ G
    return Gaa, Gav, Gva, Gvv
