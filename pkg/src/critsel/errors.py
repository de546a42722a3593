"""Exception hierarchy with stable, machine-parseable error classes.

Every error carries a ``code`` string so scripts driving the CLI can branch
on the failure class without parsing prose.
"""


class CritselError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidRatioError(CritselError):
    code = "invalid-ratio"


class EmptyTrajectoryError(CritselError):
    code = "empty-trajectory"


class OutOfRangeError(CritselError):
    code = "out-of-range"


class SelectionMismatchError(CritselError):
    code = "selection-mismatch"


class MalformedStepError(CritselError):
    code = "malformed-step"


class MalformedRecordError(CritselError):
    code = "malformed-record"


class DuplicateIdError(CritselError):
    code = "duplicate-id"


class UnparseableResponseError(CritselError):
    code = "unparseable-response"


class SelectorUnavailableError(CritselError):
    code = "selector-unavailable"

    def __init__(self, message: str, last_error: Exception | None = None):
        super().__init__(message)
        self.last_error = last_error


class TransportError(CritselError):
    code = "transport-error"


class EmptyStepError(CritselError):
    code = "empty-step"


class InvalidLogprobError(CritselError):
    code = "invalid-logprob"


class AlignmentError(CritselError):
    code = "alignment-error"


class ReplayError(CritselError):
    code = "replay-error"


class InvalidRolloutCountError(CritselError):
    code = "invalid-n"


class NoComplementError(CritselError):
    code = "no-complement"


class UnsupportedEnvironmentError(CritselError):
    code = "unsupported-environment"


class MissingSelectionError(CritselError):
    code = "missing-selection"


class ConfigurationError(CritselError):
    code = "configuration-error"


class VocabularyError(CritselError):
    code = "vocabulary-error"


class GenerationError(CritselError):
    code = "generation-error"


class FileFormatError(CritselError):
    code = "file-format-error"
