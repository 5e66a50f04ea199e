"""
Optimal power flow for hybrid AC-DC grids, solved centrally or distributed
over regions with a weighted-penalty ADMM.
"""

VERSION = "0.1.0"

from .network import (  # noqa: E402,F401
    Branch,
    Bus,
    BusKind,
    Converter,
    Generator,
    Network,
)
from .casefile import parse_case, read_case, serialize_case  # noqa: E402,F401
