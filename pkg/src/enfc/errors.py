"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 2,
data problems exit 3, numeric problems exit 4.
"""


class EnfcError(Exception):
    """Base class for all package errors."""


class DomainError(EnfcError, ValueError):
    """An argument lies outside a function's mathematical domain."""


class StructuralError(EnfcError, ValueError):
    """Shapes, sizes, or required structure of inputs are wrong."""


class NumericError(EnfcError, ArithmeticError):
    """A numeric routine failed to converge or produced non-finite values."""


class DataError(EnfcError):
    """Input data violates the documented schema or invariants."""


class FormatError(DataError):
    """A data file is structurally malformed (bad magic, truncation, bad line)."""


class ValidationError(DataError):
    """A data file parses but carries invalid values (NaN, duplicates, bad enums)."""


class InsufficientDataError(DataError):
    """Not enough samples to perform the requested fit."""


class DegenerateDataError(DataError):
    """Samples are degenerate (e.g. zero variance) for the requested fit."""


class UsageError(EnfcError):
    """The operation was invoked on an object of the wrong kind."""


class CheckpointFormatError(EnfcError):
    """Checkpoint file is malformed (bad magic, truncation, bad manifest)."""


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint format version is not supported by this build."""


class CheckpointChecksumError(CheckpointFormatError):
    """Checkpoint payload does not match its CRC32 trailer."""
