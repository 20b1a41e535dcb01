"""Exception hierarchy shared across the package."""


class MecoleError(Exception):
    """Base class for all package errors."""


class ConfigError(MecoleError):
    """Invalid configuration value or file."""


class DataError(MecoleError):
    """Malformed or inconsistent input data."""


class NumericError(MecoleError):
    """Non-finite value produced during computation."""
