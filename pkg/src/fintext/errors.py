"""Exception hierarchy shared by every fintext module.

Loaders and numeric operations never hand back a partially-valid value: any
contract violation raises one of the typed errors below.
"""


class FintextError(Exception):
    """Base class for all toolkit errors."""


class ParseError(FintextError):
    """A line-oriented input file could not be parsed.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ValidationError(FintextError):
    """A value violates a declared type invariant."""


class FormatError(FintextError):
    """A binary file is truncated, corrupt, or inconsistent with its header."""


class CapacityError(FintextError):
    """Not enough eligible items to satisfy a sampling request."""


class ParameterError(FintextError):
    """An operation was called with out-of-range parameters."""


class MetricUndefinedError(FintextError):
    """A metric has no defined value for the given inputs."""


class JudgeError(FintextError):
    """A judge call failed after retrying."""


class JudgeFailureError(FintextError):
    """Every judge response was malformed; carries the transcript."""

    def __init__(self, message: str, transcript: list[str]):
        super().__init__(message)
        self.transcript = transcript
