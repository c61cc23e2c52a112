"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, NumericalError -> 3,
PreconditionError -> 4.
"""


class PenbsdeError(Exception):
    """Base class for all package errors."""


class ConfigError(PenbsdeError):
    """Malformed or inconsistent experiment configuration."""


class NumericalError(PenbsdeError):
    """Numerical failure during a computation (blow-up, overflow, NaN)."""


class PreconditionError(PenbsdeError):
    """An operation was called outside its documented preconditions."""


class UnknownModelError(ConfigError):
    """Requested builtin model name does not exist."""
