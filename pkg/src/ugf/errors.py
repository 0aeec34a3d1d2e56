"""Exception hierarchy shared across the package.

Every error carries enough context to be reported verbatim by the CLI.
``NumericalAbort`` maps to exit code 2, everything else to exit code 1.
"""


class UGFError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(UGFError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ContractError):
    """Invalid or unknown configuration."""


class SchemaError(ContractError):
    """Input file is missing required columns or fields."""


class EmptyInputError(ContractError):
    """No usable data after ingestion or slicing."""


class InsufficientDataError(ContractError):
    """Series too short for the requested window geometry."""


class UndefinedMetricError(ContractError):
    """A metric's denominator vanished; the metric is not defined."""


class OracleInvalidError(UGFError):
    """Finite-difference oracle cannot be trusted (loss is not deterministic)."""


class NumericalAbort(UGFError):
    """A non-finite value appeared during training."""

    exit_code = 2
