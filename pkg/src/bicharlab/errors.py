"""Exception types shared across the package."""


class BicharLabError(Exception):
    """Base class for all package errors."""


class SymbolEvaluationError(BicharLabError):
    """Symbol evaluation returned a non-finite value."""


class DegenerateHamiltonField(BicharLabError):
    """|H_{re(ap)}| fell below the tracing threshold."""


class LeftCharacteristicSet(BicharLabError):
    """Newton re-projection onto {re(ap)=0} failed."""


class CoordinateSingularity(BicharLabError):
    """Riccati path left the chart (‖A‖ blew up)."""

    def __init__(self, message, partial_times=None, partial_path=None):
        super().__init__(message)
        self.partial_times = partial_times
        self.partial_path = partial_path


class CausticError(BicharLabError):
    """Characteristic fan stopped being invertible."""


class ReconstructionError(BicharLabError):
    """Eikonal reconstruction failed its residual check."""


class TransportBlowup(BicharLabError):
    """exp(-iB) overflowed; start-point normalization is wrong."""


class CutoffNotApplicable(BicharLabError):
    """No interval with amplitudes below the target size."""


class QuantizationRankError(BicharLabError):
    """Separable approximation of r(t,x,ξ) is too coarse."""


class GridMismatchError(BicharLabError):
    """Phase and amplitude grids are incompatible."""


class PeriodizationError(BicharLabError):
    """Grid function does not decay at the box boundary."""


class ConfigError(BicharLabError):
    """Experiment configuration failed validation."""
