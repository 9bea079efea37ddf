"""Exception hierarchy shared across the library."""


class PoleFinderError(Exception):
    """Base class for all library errors."""


class ConfigError(PoleFinderError):
    """Invalid run configuration, expression, or surface parameters."""


class ExpressionError(ConfigError):
    """Malformed closed-form expression."""


class OutOfChart(PoleFinderError):
    """Coordinates outside a chart's (inflated) domain."""


class NotUnit(PoleFinderError):
    """Phase point does not lie on the unit cosphere to tolerance."""


class NotInOverlap(PoleFinderError):
    """Point is not inside the overlap required for a chart transition."""


class BlowUp(PoleFinderError):
    """Adaptive step size underflowed; the trajectory cannot be continued."""


class LeftAtlas(PoleFinderError):
    """No chart of the atlas can represent the current point (atlas bug)."""


class InconclusiveProbe(PoleFinderError):
    """Self-focal probing could not decide (horizon likely too short).

    Carries the partial report in ``report`` when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonMonotoneSamples(PoleFinderError):
    """Lifted return-map samples fail strict monotonicity."""


class NonHomeomorphism(PoleFinderError):
    """Sampled circle map is not a monotone bijection of the circle."""


class OrientationReversing(PoleFinderError):
    """Operation requires an orientation-preserving map."""


class TooManyFixedPoints(PoleFinderError):
    """Fixed-point count exploded; the map is indistinguishable from the identity."""


class NonConvergent(PoleFinderError):
    """Stationary-vector computation failed to converge.

    ``residual`` is the final L1 stationarity defect.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
