"""
Bus admittance matrices. Rows and columns follow the order of
`Network.ac_buses()` / `Network.dc_buses()`.
"""

from typing import List

import numpy as np
from scipy import sparse

from .network import Branch, BusKind, Network, bus_index


def _kind_branches(net: Network, kind: BusKind) -> List[Branch]:
    kinds = {b.id: b.kind for b in net.buses}
    return [br for br in net.branches if kinds[br.from_bus] == kind]


def _square(vals, rows, cols, n: int, dtype) -> sparse.csr_matrix:
    # duplicates (parallel branches) are summed by the conversion
    return sparse.coo_matrix(
        (
            np.array(vals, dtype=dtype),
            (np.array(rows, dtype=int), np.array(cols, dtype=int)),
        ),
        shape=(n, n),
    ).tocsr()


def build_ac_admittance(net: Network) -> sparse.csr_matrix:
    buses = net.ac_buses()
    index = bus_index(buses)
    rows: List[int] = []
    cols: List[int] = []
    vals: List[complex] = []
    for br in _kind_branches(net, BusKind.AC):
        ys = 1.0 / br.impedance
        ysh = 0.5j * br.b
        f, t = index[br.from_bus], index[br.to_bus]
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [ys + ysh, ys + ysh, -ys, -ys]
    for i, bus in enumerate(buses):
        if bus.g_shunt or bus.b_shunt:
            rows.append(i)
            cols.append(i)
            vals.append(complex(bus.g_shunt, bus.b_shunt))
    return _square(vals, rows, cols, len(buses), complex)


def build_dc_admittance(net: Network) -> sparse.csr_matrix:
    buses = net.dc_buses()
    index = bus_index(buses)
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    for br in _kind_branches(net, BusKind.DC):
        g = 1.0 / br.r
        f, t = index[br.from_bus], index[br.to_bus]
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [g, g, -g, -g]
    return _square(vals, rows, cols, len(buses), float)
