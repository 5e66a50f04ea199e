"""
Exception hierarchy. Every class carries the machine-readable error class and
the process exit code used by the command-line interface.
"""


class AcdcOpfException(Exception):
    error_class = "internal"
    exit_code = 1

    def __init__(self, msg, *args):
        super().__init__(msg.format(*args))

    def to_json(self):
        return {"error_class": self.error_class, "message": str(self)}


class CaseParseError(AcdcOpfException):
    """Syntax errors in a case file; the message names line and field"""

    error_class = "parse"
    exit_code = 3


class CaseSemanticError(AcdcOpfException):
    error_class = "parse"
    exit_code = 3


class ConfigError(AcdcOpfException):
    error_class = "config"
    exit_code = 4


class InfeasibleError(AcdcOpfException):
    error_class = "infeasible"
    exit_code = 5


class NoConvergenceError(AcdcOpfException):
    error_class = "no-convergence"
    exit_code = 6


class SolverError(AcdcOpfException):
    error_class = "solver"
    exit_code = 7


class RegionSolveError(SolverError):
    def __init__(self, region, msg, *args):
        super().__init__("region {}: " + msg, region, *args)
        self.region = region


class PartitionError(AcdcOpfException):
    error_class = "partition"
    exit_code = 3


class ConsensusError(AcdcOpfException):
    error_class = "consensus"
    exit_code = 8

    def __init__(self, row, msg, *args):
        super().__init__(msg, *args)
        self.row = row


class TransportError(AcdcOpfException):
    error_class = "transport"
    exit_code = 8


class ProtocolError(TransportError):
    pass


class StaleMessageError(TransportError):
    pass
