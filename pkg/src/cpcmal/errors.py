"""Exception types shared across the package."""


class CpcmalError(Exception):
    """Base class for errors raised by cpcmal."""


class InputError(CpcmalError, ValueError):
    """Invalid user-supplied data or configuration."""


class ShapeError(InputError):
    """Array dimensions do not match what an operation expects."""


class NumericError(CpcmalError, ArithmeticError):
    """A computation produced a non-finite value."""
