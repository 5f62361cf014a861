"""Exception hierarchy.

Two families matter to callers: ``ConfigError`` subclasses describe bad
inputs (the CLI exits with code 2) and ``NumericalError`` subclasses describe
computations that could not be completed (exit code 3).
"""


class MoEQuantError(Exception):
    """Base class for all library errors."""


class ConfigError(MoEQuantError, ValueError):
    pass


class NumericalError(MoEQuantError, ArithmeticError):
    pass


# -- input / parameter errors ------------------------------------------------

class InvalidParams(ConfigError):
    pass


class UnknownTarget(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class InvalidM(ConfigError):
    pass


class InvalidCounts(ConfigError):
    pass


class OutOfDomain(ConfigError):
    pass


class OutOfRange(ConfigError):
    pass


class EmptyDataset(ConfigError):
    pass


class UnboundedNoise(ConfigError):
    pass


class DegenerateRegion(ConfigError):
    pass


# -- numerical failures --------------------------------------------------------

class NonFinite(NumericalError):
    pass


class DepthExceeded(NumericalError):
    pass


class NegativeDensity(NumericalError):
    pass


class DegenerateTable(NumericalError):
    pass


class DegenerateDensity(NumericalError):
    pass


class NonMonotone(NumericalError):
    pass


class ZeroMassRegion(NumericalError):
    pass


class NormalizationFailure(NumericalError):
    pass
