"""Exception types shared across the package."""


class PshjbError(Exception):
    """Base class for all package errors."""


class NotPSD(PshjbError):
    """A matrix required to be positive semidefinite has a significantly
    negative eigenvalue."""


class DimensionMismatch(PshjbError):
    """Vector/matrix dimensions of the arguments are inconsistent."""


class DimensionTooLarge(PshjbError):
    """Tensor-product quadrature requested in too many dimensions."""


class NotInCameronMartin(PshjbError):
    """Shift vector is not in the image of the covariance square root."""


class InclusionViolated(PshjbError):
    """Control columns leave the image of the covariance square root, so the
    smoothing operator is not well defined for the supplied model."""


class RankDeficient(PshjbError):
    """Controllability precondition of a model build failed."""


class GridMismatch(PshjbError):
    """Two value iterates do not share the same grids."""


class NoContraction(PshjbError):
    """Picard iteration residuals grew for several consecutive steps."""


class OutOfGrid(PshjbError):
    """Evaluation point is outside the stored solution grid."""


class TooCloseToHorizon(PshjbError):
    """Gradient requested at a backward time below the first grid node."""


class DominanceViolated(PshjbError):
    """A simulated policy cost fell significantly below the solved value."""


class ConfigError(PshjbError):
    """Run configuration could not be parsed or is invalid."""
