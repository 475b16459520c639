"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2,
``NumericalError`` -> 3. Both subclass ``ValueError`` so library callers
can catch them generically.
"""


class QualPerfError(ValueError):
    """Base class for all package errors."""


class DataError(QualPerfError):
    """Malformed, inconsistent or insufficient input data."""


class NumericalError(QualPerfError):
    """A numerical procedure failed (singular matrix, degenerate fit, ...)."""


class SparseRegionError(DataError):
    """A quality region has too few samples to be modelled."""


class FitFailedError(NumericalError):
    """An EM fit produced a degenerate model."""


class UnsupportedParametrizationError(QualPerfError):
    """A covariance parametrization token that is known but not implemented."""
