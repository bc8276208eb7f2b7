"""Exception types raised by the library."""


class LayerPBError(Exception):
    """Base class for all library errors."""


class ConfigError(LayerPBError):
    """Invalid run configuration or input file."""


class NumericalError(LayerPBError):
    """Base class for failures of a numerical procedure."""


class InterfaceCollision(LayerPBError, ValueError):
    """A particle lies on (or numerically too close to) a material interface."""


class UnsupportedLayerCount(LayerPBError, ValueError):
    """The explicit three-layer formulas were requested for another stack."""


class SingularTransmissionSystem(NumericalError):
    """The interface transmission system could not be solved."""


class DivergentIntegral(NumericalError):
    """A spectral integral has no exponential decay and cannot be truncated."""


class ToleranceNotMet(NumericalError):
    """Adaptive quadrature refinement hit its cap before converging."""


class StabilityViolation(NumericalError):
    """A recurrence was applied outside of its stable region."""


class TableUnderflow(NumericalError, IndexError):
    """A Sommerfeld table entry beyond the table extent was requested."""


class InadmissibleComponent(LayerPBError, ValueError):
    """The reaction component does not exist for the given layer pair."""


class CenterSideViolation(LayerPBError, ValueError):
    """An expansion center lies on the wrong side of the governing interface."""


class EmptyInput(LayerPBError, ValueError):
    """A tree was requested for an empty point set."""


class MixedSides(LayerPBError, ValueError):
    """Sources and targets of a reaction tree are not separated by the interface."""


class ZeroReference(LayerPBError, ZeroDivisionError):
    """A relative error was requested against a zero reference value."""
