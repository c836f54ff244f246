"""Error hierarchy; every error knows the CLI exit code it maps to."""

from typing import Optional


class EnsembleBoundError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InputFormatError(EnsembleBoundError):
    """A file could not be read or parsed."""

    exit_code = 2

    def __init__(self, detail: str, line_number: Optional[int] = None):
        if line_number is not None:
            detail = f"line {line_number}: {detail}"
        super().__init__(detail)
        self.line_number = line_number


class InvalidInputError(EnsembleBoundError):
    """Inputs violate a domain precondition."""

    exit_code = 3


class InvalidRecordError(InvalidInputError):
    """A single prediction record is out of range or malformed."""

    def __init__(self, detail: str, sample_id: str):
        super().__init__(f"sample {sample_id!r}: {detail}")
        self.sample_id = sample_id


class InfeasibleInstanceError(InvalidInputError):
    """Marginals cannot be met, e.g. N != K * S."""


class MarginalViolationError(InvalidInputError):
    """An assignment matrix breaks a row or column marginal."""


class SolverRefusedError(EnsembleBoundError):
    """A solver declined an instance that exceeds its resource guard."""

    exit_code = 4

    def __init__(self, detail: str, estimate: int):
        super().__init__(detail)
        self.estimate = estimate
