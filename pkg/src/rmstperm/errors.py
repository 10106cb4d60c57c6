"""Exception hierarchy shared by the estimators, tests and the CLI."""


class RmstError(Exception):
    """Base class for all errors raised by :mod:`rmstperm`."""


class InvalidInputError(RmstError, ValueError):
    """Malformed or out-of-range input (empty samples, bad status codes, ...)."""


class DataFormatError(InvalidInputError):
    """A dataset file could not be parsed.

    ``row`` is the 1-based line number in the file when known.
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"line {row}: {message}"
        super().__init__(message)
        self.row = row


class EstimabilityError(RmstError):
    """The Kaplan-Meier curve is not defined on the whole window ``[0, tau]``."""


class DegenerateError(RmstError):
    """A variance or RMST estimate is zero where a positive value is needed."""


class ModelError(RmstError):
    """A theoretical model cannot be evaluated (non-finite values, no support)."""


class CalibrationError(RmstError):
    """A scenario parameter cannot be solved for the requested RMST difference."""


class PathologicalConfigError(RmstError):
    """Dataset generation kept producing inestimable samples."""


class ConfigError(RmstError):
    """A simulation config file violates the expected schema.

    ``path`` names the offending entry, e.g. ``"grid.n[1]"``.
    """

    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
