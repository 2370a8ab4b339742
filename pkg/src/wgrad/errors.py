"""Exception hierarchy shared across the package."""


class WgradError(Exception):
    """Base class for all package errors."""


class ZeroMassError(WgradError):
    """An attribution map or measure has zero total mass."""


class OutOfBoundsError(WgradError):
    """A region of interest exceeds the grid."""


class DegenerateStatError(WgradError):
    """A per-channel standard deviation is zero or negative."""


class FormatError(WgradError):
    """A raster file is malformed (bad magic, truncation, non-finite payload)."""


class ShapeError(WgradError):
    """Array shapes are incompatible with the requested operation."""


class NotScalarError(WgradError):
    """Backward pass requested from a non-scalar node."""


class ChannelError(WgradError):
    """Channel index out of range."""


class InsufficientSamplesError(WgradError):
    """Too few samples for the requested statistic."""


class NonConvergenceError(WgradError):
    """An iterative solver hit its iteration budget.

    Carries the last observed marginal violation in ``violation``.
    """

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class NumericalUnderflowError(WgradError):
    """Kernel underflow that the log-domain fallback could not recover."""


class SizeError(WgradError):
    """Problem instance too large for an exact solver."""


class AllMaskedError(WgradError):
    """Imputation mask covers every cell."""


class DomainError(WgradError):
    """Parameter outside the operation's domain."""
