"""Exception hierarchy shared by every pipeline stage.

Each class carries the CLI exit code used when it escapes a subcommand.
"""


class MladError(Exception):
    exit_code = 2


class DimensionError(MladError, ValueError):
    """Operand shapes are incompatible."""


class NumericDomainError(MladError, ArithmeticError):
    """Non-finite values or an argument outside a function's domain."""

    exit_code = 3


class ContractError(MladError, RuntimeError):
    """A documented precondition of an operation was violated."""


class ConfigError(MladError, ValueError):
    exit_code = 1


class DataError(MladError, ValueError):
    """Malformed or inconsistent input files."""


class LookupMissError(DataError, KeyError):
    """A template key is absent from an embedding table."""

    def __str__(self):  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""
