"""Exception types shared across the package.

Every error raised deliberately by this package derives from RevsdeError,
so callers can catch the whole family with one clause. Errors that signal
bad argument values also derive from ValueError.
"""


class RevsdeError(Exception):
    """Base class for all errors raised by revsde."""


class NonPositiveStepError(RevsdeError, ValueError):
    """A step size or quadrature step that must be positive is not."""


class NegativeTimeError(RevsdeError, ValueError):
    """A time argument that must be nonnegative is negative."""


class SingularCovarianceError(RevsdeError, ValueError):
    """A covariance that must be symmetric positive definite is not."""


class DimensionMismatchError(RevsdeError, ValueError):
    """Array arguments disagree on dimension."""


class NoSamplesError(RevsdeError, ValueError):
    """An operation that needs at least one sample received none."""


class NonFiniteStateError(RevsdeError, FloatingPointError):
    """A trajectory state stopped being finite."""


class UnsupportedDataError(RevsdeError, ValueError):
    """The operation only supports a restricted data family."""


class TooFewSamplesError(RevsdeError, ValueError):
    """Moment accumulation needs at least two samples."""


class ModeMismatchError(RevsdeError, ValueError):
    """Two moment summaries use different second-moment modes."""


class NegativeEigenvalueError(RevsdeError, ValueError):
    """An eigenvalue is negative beyond the PSD clamping threshold."""


class NotSymmetricError(RevsdeError, ValueError):
    """A matrix that must be symmetric is not."""


class DegenerateFitError(RevsdeError, ValueError):
    """A slope fit has fewer than two usable, distinct abscissae."""


class InvalidSweepValueError(RevsdeError, ValueError):
    """Swept values must be positive and pairwise distinct."""


class SampleIOError(RevsdeError, OSError):
    """Reading or writing a sample file failed at the OS level."""


class BadMagicError(RevsdeError, ValueError):
    """A sample file does not start with the expected magic bytes."""


class VersionMismatchError(RevsdeError, ValueError):
    """A sample file declares an unsupported format version."""


class TruncatedPayloadError(RevsdeError, ValueError):
    """A sample file ends before the declared payload is complete."""


class NonFiniteDataError(RevsdeError, ValueError):
    """Sample data contains NaN or infinite entries."""
