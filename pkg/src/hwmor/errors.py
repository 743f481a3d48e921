"""Exception hierarchy shared across the pipeline.

Two families matter to callers: input/validation problems (CLI exit code 2)
and numerical failures (CLI exit code 3). Everything raised on purpose by
this package derives from PipelineError.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all deliberate pipeline failures."""

    exit_code = 1


class ValidationError(PipelineError):
    """Malformed input, configuration, or request."""

    exit_code = 2


class NumericalError(PipelineError):
    """A solve or decomposition failed or produced unusable output."""

    exit_code = 3


# --- market data ------------------------------------------------------------

class TenorParseError(ValidationError):
    def __init__(self, label: str):
        super().__init__(f"cannot parse tenor label {label!r}")
        self.label = label


class MissingValue(ValidationError):
    def __init__(self, row: int, column: int):
        super().__init__(f"missing or unparsable value at row {row}, column {column}")
        self.row = row
        self.column = column


class NonMonotonicDates(ValidationError):
    def __init__(self, row: int, message: str = ""):
        super().__init__(message or f"observation dates not strictly increasing at row {row}")
        self.row = row


# --- curve simulation -------------------------------------------------------

class NonPositiveRate(ValidationError):
    def __init__(self, row: int, column: int, value: float):
        super().__init__(
            f"rate matrix entry ({row}, {column}) = {value!r} is not positive; "
            "apply a positivity shift before taking log returns"
        )
        self.row = row
        self.column = column
        self.value = value


class RankDeficient(NumericalError):
    pass


# --- calibration ------------------------------------------------------------

class DomainError(ValidationError):
    pass


class SingularDiagonal(NumericalError):
    def __init__(self, index: int, value: float):
        super().__init__(
            f"calibration system diagonal entry {index} = {value:.3e} is below tolerance"
        )
        self.index = index
        self.value = value


class CalibrationFailed(NumericalError):
    pass


# --- finite differences -----------------------------------------------------

class DegenerateDomain(ValidationError):
    pass


class ScheduleMismatch(ValidationError):
    pass


class SolveFailure(NumericalError):
    pass


# --- reduced order model ----------------------------------------------------

class ConvergenceFailure(NumericalError):
    pass


# --- sampling / surrogate ---------------------------------------------------

class InsufficientSpace(ValidationError):
    pass


class NonPositiveError(ValidationError):
    pass


class DegenerateDesign(ValidationError):
    pass


# --- reporting ---------------------------------------------------------------

class OutOfDomain(ValidationError):
    pass


class StaleArtifact(ValidationError):
    pass
