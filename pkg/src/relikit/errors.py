"""Exception hierarchy shared across the toolkit.

Every error raised by this package derives from :class:`RelikitError` so
callers can catch one type at the boundary. The subclasses map onto the
CLI exit codes: usage problems exit 1, data problems exit 2, numerical
failures exit 3.
"""


class RelikitError(Exception):
    """Base class for all toolkit errors."""


class InvalidTensorError(RelikitError):
    """Tensor data violates a structural invariant (shape, dtype, finiteness)."""


class TensorFormatError(RelikitError):
    """A tensor file is malformed: bad magic, corrupt header, or wrong payload size."""


class ManifestError(RelikitError):
    """A dataset manifest is inconsistent or references missing files."""


class MetricError(RelikitError):
    """A metric precondition is violated (empty inputs, degenerate configurations)."""


class CalibrationError(RelikitError):
    """Calibration fitting or application failed its preconditions."""


class NumericalError(RelikitError):
    """A numerical routine produced a non-finite result or left its bounds."""


class UsageError(RelikitError):
    """Bad command-line arguments or configuration values."""
