from typing import NamedTuple

import numpy as np


class OpfVariableMap(NamedTuple):
    """
    Index layout of the OPF variable vector:
    [Va (AC buses), Vm (AC buses), Vdc (DC buses), Pg, Qg (generators),
     Pc, Qc (converters)]
    """

    nac: int
    ndc: int
    ng: int
    nc: int

    @classmethod
    def build(cls, nac: int, ndc: int, ng: int, nc: int) -> "OpfVariableMap":
        return cls(nac, ndc, ng, nc)

    @property
    def n(self) -> int:
        return 2 * self.nac + self.ndc + 2 * self.ng + 2 * self.nc

    @property
    def va(self) -> slice:
        return slice(0, self.nac)

    @property
    def vm(self) -> slice:
        return slice(self.nac, 2 * self.nac)

    @property
    def vdc(self) -> slice:
        start = 2 * self.nac
        return slice(start, start + self.ndc)

    @property
    def pg(self) -> slice:
        start = 2 * self.nac + self.ndc
        return slice(start, start + self.ng)

    @property
    def qg(self) -> slice:
        start = 2 * self.nac + self.ndc + self.ng
        return slice(start, start + self.ng)

    @property
    def pc(self) -> slice:
        start = 2 * self.nac + self.ndc + 2 * self.ng
        return slice(start, start + self.nc)

    @property
    def qc(self) -> slice:
        start = 2 * self.nac + self.ndc + 2 * self.ng + self.nc
        return slice(start, start + self.nc)

    def ranges(self):
        return {
            "va": self.va,
            "vm": self.vm,
            "vdc": self.vdc,
            "pg": self.pg,
            "qg": self.qg,
            "pc": self.pc,
            "qc": self.qc,
        }

    def index(self, block: str, i: int) -> int:
        return self.ranges()[block].start + i

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n)
