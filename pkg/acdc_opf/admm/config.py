import math
from typing import Any, Dict, NamedTuple

import fsspec
import yaml

from ..helper.exception import ConfigError
from ..nlp.problem import SolverOptions

TRANSPORTS = ("inproc", "socket")

# loosest tolerance of an inexact regional solve
INEXACT_TOL_MAX = 1e-4


class AdmmConfig(NamedTuple):
    """
    Settings of the distributed solve.

    rho0: initial penalty of every region
    tau: factor applied to a region's penalty when its residual stalls
    theta: required residual decrease between two iterations
    eps: bound on the global consensus residual
    w_voltage, w_power_ac, w_power_dc: penalty weights of voltage rows, AC
        power rows and DC power rows
    max_iterations: iteration limit
    workers: processes solving regions in parallel, 1 solves in-process
    warm_start: start every regional solve from the previous one
    solver_tol, solver_max_iter: settings of the regional NLP solves
    solver_tol_ratio: regional NLP tolerance as a fraction of the last global
        residual, kept between solver_tol and INEXACT_TOL_MAX; 0 solves every
        region to solver_tol
    transport: message exchange between regions, inproc or socket
    """

    rho0: float = 100.0
    tau: float = 1.1
    theta: float = 0.99
    eps: float = 1e-3
    w_voltage: float = 100.0
    w_power_ac: float = 1.0
    w_power_dc: float = 10.0
    max_iterations: int = 500
    workers: int = 1
    warm_start: bool = True
    solver_tol: float = 1e-8
    solver_max_iter: int = 300
    solver_tol_ratio: float = 0.01
    transport: str = "inproc"

    def validate(self) -> "AdmmConfig":
        if not self.rho0 > 0:
            raise ConfigError("rho0 must be positive, got {}", self.rho0)
        if not self.tau > 1:
            raise ConfigError("tau must be larger than 1, got {}", self.tau)
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1), got {}", self.theta)
        if not self.eps > 0 or math.isnan(self.eps):
            raise ConfigError("eps must be positive, got {}", self.eps)
        for name in ("w_voltage", "w_power_ac", "w_power_dc"):
            if not getattr(self, name) > 0:
                raise ConfigError("{} must be positive", name)
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not self.solver_tol > 0 or self.solver_max_iter < 1:
            raise ConfigError("invalid regional solver settings")
        if not self.solver_tol_ratio >= 0:
            raise ConfigError(
                "solver_tol_ratio must not be negative, got {}", self.solver_tol_ratio
            )
        if self.transport not in TRANSPORTS:
            raise ConfigError(
                "unknown transport '{}', expected one of {}",
                self.transport,
                ", ".join(TRANSPORTS),
            )
        return self

    def solver_options(self, residual: float = 0.0) -> SolverOptions:
        """Options of the regional solves following a global `residual`"""
        tol = self.solver_tol
        if self.solver_tol_ratio > 0 and math.isfinite(residual):
            loose = min(self.solver_tol_ratio * residual, INEXACT_TOL_MAX)
            tol = max(tol, loose)
        return SolverOptions(
            tol=tol,
            max_iter=self.solver_max_iter,
            acceptable_tol=max(SolverOptions().acceptable_tol, tol),
        )

    def rho(self, power: int) -> float:
        """Penalty after `power` increases"""
        return self.rho0 * self.tau ** power

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "AdmmConfig":
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError("unknown configuration keys: {}", sorted(unknown))
        try:
            typed = {k: type(cls._field_defaults[k])(v) for k, v in values.items()}
        except (TypeError, ValueError) as e:
            raise ConfigError("invalid configuration value: {}", e)
        return cls(**typed)

    @classmethod
    def from_yaml(cls, path: str) -> "AdmmConfig":
        try:
            with fsspec.open(path, "rt") as f:
                values = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError("cannot read configuration {}: {}", path, e)
        if not isinstance(values, dict):
            raise ConfigError("configuration {} must be a mapping", path)
        return cls.from_dict(values)
