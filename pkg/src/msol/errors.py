"""Exception types shared across the package."""


class MsolError(Exception):
    """Base class for all package errors."""


class ConfigError(MsolError):
    """Invalid configuration, layout, or architecture mismatch."""


class UsageError(MsolError):
    """An API was called out of order or with out-of-range arguments."""


class NumericError(MsolError):
    """A loss, gradient, or log-probability became non-finite."""
