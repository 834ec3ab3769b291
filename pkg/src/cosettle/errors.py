"""Exception hierarchy shared by every module."""


class CoSettleError(Exception):
    """Base class for all library errors."""


class ParameterError(CoSettleError, ValueError):
    """A scalar or configuration argument is outside its valid range."""


class InvalidInputError(CoSettleError, ValueError):
    """Array input contains non-finite entries or is otherwise unusable."""


class ShapeError(CoSettleError, ValueError):
    """Array shapes are inconsistent with each other or with the parameters."""


class ContractError(CoSettleError, RuntimeError):
    """A call violated a usage contract, e.g. a stale forward cache."""


class NumericError(CoSettleError, ArithmeticError):
    """An iterative method failed to converge or produced NaN."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class FormatError(CoSettleError, ValueError):
    """A binary file does not match the expected layout.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
