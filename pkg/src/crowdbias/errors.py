"""Exception hierarchy. Each family maps onto one CLI exit code."""


class CrowdBiasError(Exception):
    """Base class. ``stage`` is filled in by the audit runner for context."""

    exit_code = 1

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self):
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ValidationError(CrowdBiasError):
    """Configuration problems. Carries every violation, not just the first."""

    exit_code = 2

    def __init__(self, violations, stage=None):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations), stage)


class DataError(CrowdBiasError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericError(CrowdBiasError):
    """A statistic is undefined for the given data."""

    exit_code = 4


class DegenerateError(NumericError):
    """Zero variance or zero range where a spread is required."""


class RankDeficientError(NumericError):
    def __init__(self, message, columns=(), stage=None):
        super().__init__(message, stage)
        self.columns = tuple(columns)
