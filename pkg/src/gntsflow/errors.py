"""Exception hierarchy shared across the package."""


class GntsError(Exception):
    """Base class for all package errors."""


class ParameterError(GntsError, ValueError):
    """A parameter value lies outside its mathematical domain."""


class SamplerError(GntsError, RuntimeError):
    """A rejection sampler exhausted its iteration budget."""


class NumericError(GntsError, RuntimeError):
    """A numerical routine produced non-finite or infeasible values."""


class DataError(GntsError, ValueError):
    """Input data is malformed, inconsistent, or degenerate."""


class ConfigError(GntsError, ValueError):
    """A run configuration failed schema validation."""
