"""Exception hierarchy shared by the filtering, synthesis and tracking code."""

import numpy as np


class NC2Error(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NC2Error, ValueError):
    """Invalid dimensions, parameters or configuration keys."""


class NumericallySingularError(NC2Error, np.linalg.LinAlgError):
    """The innovation covariance could not be safely inverted."""

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = None if matrix is None else np.array(matrix, copy=True)


class InsufficientDataError(NC2Error):
    """A moment or calibration window does not hold enough samples yet."""


class SynthesisError(NC2Error, RuntimeError):
    """Random system generation exhausted its retry budget."""
