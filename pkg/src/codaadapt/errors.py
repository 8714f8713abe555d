"""Exception hierarchy shared by all modules."""


class CodaAdaptError(Exception):
    """Base class for library errors."""


class ValidationError(CodaAdaptError, ValueError):
    """Invalid configuration, arguments or dataset contents."""


class DegenerateSignalError(ValidationError):
    """A signal or vector without the spread an operation needs (zero energy, constant, zero norm)."""


class RangeError(ValidationError, IndexError):
    """Window or lag outside the valid index range."""


class FormatError(CodaAdaptError):
    """Missing, corrupt or version-incompatible file."""


class NumericError(CodaAdaptError, ArithmeticError):
    """Non-finite values or an exact-zero normalizer in a numeric pipeline."""
