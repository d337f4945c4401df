"""Error taxonomy shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """A config value violates a structural constraint (divisibility, coverage, sizes)."""


class UsageError(RuntimeError):
    """An API was called outside its contract (non-scalar loss, step out of range, ...)."""


class FormatError(ValueError):
    """An on-disk artifact does not match its declared wire format."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values where finite ones are required."""


class InputError(ValueError):
    """Runtime data (labels, indices) outside the valid domain."""
