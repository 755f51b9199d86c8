"""Exception types shared across the package.

The CLI maps these onto exit codes (usage -> 1, numeric -> 2).
"""


class DexLabError(Exception):
    pass


class ConfigurationError(DexLabError, ValueError):
    """Dimensions, variants or files that do not fit together."""


class UsageError(DexLabError, ValueError):
    """An operation was called outside its contract."""


class NumericError(DexLabError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""
