"""Exception hierarchy shared by all modules.

The CLI maps ``ConfigError`` subclasses to exit code 2 and
``NumericalError`` subclasses to exit code 3.
"""


class SynantagError(Exception):
    """Base class for all package errors."""


class ConfigError(SynantagError, ValueError):
    """Invalid configuration, schema, or argument."""


class SchemaError(ConfigError):
    """Input table is missing a column or has the wrong layout."""


class DomainError(ConfigError):
    """Input values fall outside the supported domain."""


class ShapeError(ConfigError):
    """Array dimensions do not conform."""


class EmptyDatasetError(ConfigError):
    """Cleaning removed every record."""


class NumericalError(SynantagError, ArithmeticError):
    """A numerical routine failed."""


class DegeneracyError(NumericalError):
    """A quantity that must be strictly positive is zero or constant."""


class SamplerError(NumericalError):
    """The MCMC sampler hit an unrecoverable state."""
