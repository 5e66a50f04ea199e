from pathlib import Path
from typing import NamedTuple, Optional

from . import VERSION
from .admm import AdmmConfig
from .helper.exception import ConfigError

MODES = ("central", "distributed")


class RunManifest(NamedTuple):
    """
    Everything that determines the outcome of a run, written as
    manifest.json next to its results.

    case: path of the case file
    mode: central or distributed
    config: effective ADMM settings; transport and solver settings included
    out: output directory, nothing is written when None
    compare_central: also solve centrally and report the optimality gap
    seed: recorded with the run; solves draw no random numbers
    """

    case: str
    mode: str = "central"
    config: AdmmConfig = AdmmConfig()
    out: Optional[Path] = None
    compare_central: bool = False
    seed: int = 0

    def validate(self) -> "RunManifest":
        if self.mode not in MODES:
            raise ConfigError(
                "unknown mode '{}', expected one of {}", self.mode, ", ".join(MODES)
            )
        if self.mode == "central" and self.config.transport != "inproc":
            raise ConfigError(
                "transport '{}' needs the distributed mode", self.config.transport
            )
        self.config.validate()
        return self

    def to_json(self) -> dict:
        return {
            "version": VERSION,
            "case": self.case,
            "mode": self.mode,
            "config": self.config._asdict(),
            "out": None if self.out is None else str(self.out),
            "compare_central": self.compare_central,
            "seed": self.seed,
        }
