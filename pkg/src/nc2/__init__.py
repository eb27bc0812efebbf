"""Adaptive noise-covariance estimation for linear Kalman filters.

Each noise covariance is split into a scalar intensity (its entry sum) and a
unit-sum distribution matrix. The distribution is re-estimated from
innovation moments; the intensity is corrected by two innovation
calibrators. The package also contains a Monte Carlo benchmark harness and a
3D multi-object tracker built on the same filter.
"""

__version__ = "0.1.0"

from .bench import SuiteResult, SuiteSummary, TrialResult, aggregate, relative_error, run_suite
from .errors import (
    ConfigurationError,
    InsufficientDataError,
    NC2Error,
    NumericallySingularError,
    SynthesisError,
)
from .filters import BaselineFilter, NC2Config, NC2Filter, SageFilter, StepOutput, make_filter
from .statespace import FilterState, InnovationRecord, SystemModel, kf_predict, kf_update
from .synthesis import SynthesisConfig, SystemClass, TrialData, generate_system, generate_trial

__all__ = [
    "__version__",
    "SuiteResult", "SuiteSummary", "TrialResult", "aggregate", "relative_error", "run_suite",
    "ConfigurationError", "InsufficientDataError", "NC2Error", "NumericallySingularError",
    "SynthesisError",
    "BaselineFilter", "NC2Config", "NC2Filter", "SageFilter", "StepOutput", "make_filter",
    "FilterState", "InnovationRecord", "SystemModel", "kf_predict", "kf_update",
    "SynthesisConfig", "SystemClass", "TrialData", "generate_system", "generate_trial",
]
