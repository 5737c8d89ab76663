"""Exception hierarchy shared by all modules.

Everything raised on bad input or an unsolvable numerical step derives from
:class:`BcroaError`; the CLI maps it to exit code 1.
"""

from __future__ import annotations


class BcroaError(Exception):
    """Base class for domain errors."""


class ExprSyntaxError(BcroaError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class DimensionError(BcroaError):
    pass


class EvaluationDomainError(BcroaError):
    """A partial operation (log, sqrt, div, arccos) was evaluated off its domain."""

    def __init__(self, message: str, subtree: str = ""):
        self.subtree = subtree
        super().__init__(f"{message}: {subtree}" if subtree else message)


class SystemValidationError(BcroaError):
    pass


class ApproximationError(BcroaError):
    pass


class GpFitError(BcroaError):
    def __init__(self, message: str, condition: float | None = None):
        self.condition = condition
        suffix = f" (condition estimate {condition:.3e})" if condition is not None else ""
        super().__init__(message + suffix)


class SdpFormatError(BcroaError):
    pass


class UnrepresentableMonomialError(BcroaError):
    def __init__(self, monomial: tuple[int, ...], constraint: str = ""):
        self.monomial = monomial
        where = f" in constraint {constraint!r}" if constraint else ""
        super().__init__(f"monomial {monomial} cannot be represented on the Gram basis{where}")


class SosInfeasibleError(BcroaError):
    pass


class EmptySafeSetError(BcroaError):
    pass
