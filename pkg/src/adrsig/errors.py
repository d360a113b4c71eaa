class AdrsigError(Exception):
    """Base class for errors raised by this package."""


class DatasetError(AdrsigError):
    """Input files are missing or unreadable."""


class ConfigError(AdrsigError, ValueError):
    """Invalid run or generator configuration."""


class UndefinedValueError(AdrsigError, ArithmeticError):
    """A statistic is undefined for the given counts (e.g. a zero cell)."""


class ConvergenceError(AdrsigError, ArithmeticError):
    """A numerical solver failed to converge."""
