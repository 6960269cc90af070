"""defectcast: defect-count estimation models.

Dataset handling, variable screening, model trees, optimal-scaling
regression, neuro-fuzzy recalibration, and the evaluation harness tying
them together, plus a batch CLI.
"""

__version__ = "0.1.0"

from ._errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DefectcastError,
    NumericalError,
)

__all__ = [
    "__version__",
    "DefectcastError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "ConvergenceError",
]
