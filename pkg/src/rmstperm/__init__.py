"""Restricted mean survival time: estimation and two-sample permutation inference."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CalibrationError,
    ConfigError,
    DataFormatError,
    DegenerateError,
    EstimabilityError,
    InvalidInputError,
    ModelError,
    PathologicalConfigError,
    RmstError,
)
from .inference import (  # noqa: E402
    InferenceResult,
    TestConfig,
    asymptotic_test,
    horizontal_extension,
    permute_pairs,
    run_tests,
    studentized_perm_test,
    unstudentized_perm_test,
)
from .rmst import TimeWindow, estimate_rmst, rmst, rmst_variance, true_rmst, true_sigma, true_sigma_perm  # noqa: E402
from .survival import (  # noqa: E402
    Observation,
    Sample,
    StepFunction,
    censoring_km,
    counting_processes,
    estimability,
    kaplan_meier,
    nelson_aalen,
)
