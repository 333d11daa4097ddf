"""Exception hierarchy shared across the package."""


class KMLEError(Exception):
    """Base class for every error raised by kmle."""


class ValidationError(KMLEError, ValueError):
    """Input failed a structural or value check."""


class Empty(ValidationError):
    pass


class MixedDims(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class OrderTooLarge(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class OutOfSupport(ValidationError):
    pass


class TooFewSeries(ValidationError):
    pass


class DegenerateCluster(KMLEError, ArithmeticError):
    """A cluster's maximum-likelihood fit does not exist.

    ``cluster`` holds the offending cluster index when known.
    """

    def __init__(self, msg="", cluster=None):
        super().__init__(msg)
        self.cluster = cluster


class RankDeficient(DegenerateCluster):
    pass


class SingularSigma(DegenerateCluster):
    pass


class BoundaryMLE(DegenerateCluster):
    pass


class Unstable(KMLEError, ValueError):
    pass


class Unachievable(KMLEError, ValueError):
    pass


class ThresholdNotMet(KMLEError):
    """No restart reached the requested log-likelihood threshold."""
