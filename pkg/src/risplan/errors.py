"""Exception types shared across the package.

The CLI maps ConfigError to exit status 2 and every other RisplanError
to exit status 1.
"""


class RisplanError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(RisplanError):
    """Invalid configuration value or malformed config file."""


class InfeasibleError(RisplanError):
    """No deployment satisfying the constraints exists (or was found)."""


class ResourceLimitError(RisplanError):
    """A guard against combinatorial blow-up was exceeded."""


class DatasetFormatError(RisplanError):
    """On-disk dataset or checkpoint does not match its declared schema."""


class NumericError(RisplanError):
    """A non-finite value appeared where the math guarantees finiteness."""


class MetricUndefinedError(RisplanError):
    """A ratio metric has a zero denominator for this scenario."""
