"""Exception hierarchy shared across the package.

The three concrete classes map onto the CLI exit codes:
ConfigError -> 1, DataError -> 2, NumericalError -> 3.
"""


class DefectcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DefectcastError):
    """Invalid configuration or command usage."""


class DataError(DefectcastError):
    """Malformed, inconsistent, or insufficient input data."""


class NumericalError(DefectcastError):
    """A numerical routine failed (rank deficiency, divergence, domain error)."""


class ConvergenceError(NumericalError):
    """An iterative procedure hit its iteration cap without converging."""
