"""Exception hierarchy.

ValidationError covers bad inputs and arguments (CLI exit code 1),
EstimationError and its subclasses cover runtime failures of the
estimation pipeline (CLI exit code 2).
"""


class FdadaptError(Exception):
    """Base class for all package errors."""


class ValidationError(FdadaptError, ValueError):
    """Invalid input data, file format, or argument value."""


class EstimationError(FdadaptError, RuntimeError):
    """Estimation could not be carried out on the given data."""


class InsufficientDataError(EstimationError):
    """Too few usable curves or observations for the requested quantity."""

    def __init__(self, message, retained=0):
        super().__init__(message)
        self.retained = retained


class GenerationError(EstimationError):
    """Synthetic data generation failed (e.g. covariance factorization)."""


class ExperimentError(EstimationError):
    """A replication experiment failed beyond the tolerated rate."""
