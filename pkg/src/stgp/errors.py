"""Exception types shared across the library."""


class StgpError(Exception):
    """Base class for all library-specific errors."""


class DimensionMismatch(StgpError):
    """Shapes of the supplied arrays are inconsistent."""


class CholeskyFailure(StgpError):
    """A covariance matrix is not numerically positive definite, even after jitter."""


class NonDiagonalNoise(StgpError):
    """An operation that requires diagonal observation noise received a full matrix."""


class NegativeTimestep(StgpError):
    """Temporal discretisation was asked for a negative time increment."""


class NonIncreasingTimes(StgpError):
    """Time stamps must be strictly increasing."""


class MaskLengthMismatch(StgpError):
    """Per-time presence mask does not match the number of grid locations."""


class SingularPseudoGram(StgpError):
    """The pseudo-input gram matrix is singular; pseudo-inputs are too close."""


class TimeAlignmentError(StgpError):
    """An observation time does not coincide with any pseudo-point time."""


class QueryTimeNotOnGrid(StgpError):
    """A prediction was requested at a time carrying no pseudo-points."""


class AlphaOutOfRange(StgpError):
    """The observation-model interpolation parameter must lie in [0, 1]."""


class SingularConditioningSet(StgpError):
    """The conditioning set of a conditional covariance has a singular gram."""
