"""Exception types shared across the toolkit.

DataError subclasses map to CLI exit code 2; everything else that escapes
maps to 3 (runtime) or 1 (usage).
"""


class ShapeError(ValueError):
    """Tensor extents incompatible with an operation."""


class ConfigError(ValueError):
    """Invalid configuration value (rates, sizes, modes)."""


class StateError(RuntimeError):
    """Operation invoked out of order, e.g. backward before forward."""


class InfeasibleTargetError(ValueError):
    """CTC target cannot be emitted in the given number of frames."""

    def __init__(self, target_length, required_length, input_length):
        self.required_length = required_length
        super().__init__(
            f"target of length {target_length} needs at least "
            f"{required_length} input frames, got {input_length}"
        )


class UndefinedMetricError(ValueError):
    """Metric has no defined value (e.g. WER with empty references)."""


class DataError(Exception):
    """Base class for corpus / file / schema problems."""


class ParseError(DataError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    """Well-formed input violating the expected schema."""


class UnknownGlossError(DataError):
    def __init__(self, gloss):
        self.gloss = gloss
        super().__init__(f"unknown gloss {gloss!r}")


class ManifestError(DataError):
    """Manifest file missing, duplicated ids, or dangling references."""


class CheckpointFormatError(DataError):
    """Bad magic bytes or truncated checkpoint payload."""


class CheckpointVersionError(DataError):
    """Checkpoint written by an unsupported format version."""


class CheckpointMismatchError(DataError):
    """Checkpoint config disagrees with expectation or its own payload."""
