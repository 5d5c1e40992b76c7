"""Exception hierarchy shared across the package.

Every error raised by the library derives from ProtoprobeError so that the
CLI can map failures onto its exit-code contract (1 usage, 2 data, 3
numeric divergence).
"""


class ProtoprobeError(Exception):
    """Base class for all library errors."""


class DimensionError(ProtoprobeError):
    """Operand shapes are incompatible."""


class ParameterError(ProtoprobeError):
    """A scalar argument is outside its documented range."""


class DegenerateInputError(ProtoprobeError):
    """Input is numerically degenerate (e.g. a near-zero row fed to a
    normalizer, or an augmentation that dropped every coordinate)."""


class ContractViolation(ProtoprobeError):
    """A documented precondition between modules was broken."""


class ConfigurationError(ProtoprobeError):
    """Run configuration is internally inconsistent."""


class SplitError(ProtoprobeError):
    """A labelled/unlabelled split cannot be realised on the given data."""


class DatasetFormatError(ProtoprobeError):
    """A dataset or checkpoint file failed to parse or validate.

    Carries the offending line number when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateGraphError(ProtoprobeError):
    """Graph has no usable flow (zero total edge weight)."""


class NumericError(ProtoprobeError):
    """A numeric quantity became non-finite."""


class NumericDivergenceError(NumericError):
    """Training diverged (loss non-finite or above the guard threshold)."""
