"""Exception types raised across the package."""


class RobustPOError(Exception):
    """Base class for all package errors."""


class ShapeError(RobustPOError, ValueError):
    pass


class NumericalError(RobustPOError, ArithmeticError):
    pass


class SupportError(RobustPOError, ValueError):
    """Absolute continuity mu_pi << mu_ref is violated.

    ``pairs`` lists the offending (state, action) indices.
    """

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = list(pairs)


class NormalizationError(RobustPOError, ValueError):
    pass


class DegenerateProxyError(RobustPOError, ValueError):
    """The proxy reward is (numerically) constant under the reference policy."""


class IndependenceError(RobustPOError, ValueError):
    """Two batches that must be independent share a seed."""


class DivergenceError(RobustPOError, ArithmeticError):
    pass


class InvariantError(RobustPOError, ValueError):
    pass


class SpanError(RobustPOError, ValueError):
    """Features on the reference support do not span the feature space."""

    def __init__(self, message, directions=None):
        super().__init__(message)
        self.directions = directions


class DualNonConvergence(RobustPOError, RuntimeError):
    """The linear dual solve did not reach the residual tolerance.

    Carries the best iterate seen and its residual norm.
    """

    def __init__(self, message, best, residual):
        super().__init__(message)
        self.best = best
        self.residual = residual


class FeatureMismatchError(RobustPOError, ValueError):
    pass


class EnvironmentSizeError(RobustPOError, ValueError):
    pass


class InfeasibleSamplingWarning(UserWarning):
    pass


class BoundViolation(RobustPOError, AssertionError):
    pass


class ConfigError(RobustPOError, ValueError):
    pass


class ArtifactError(RobustPOError, ValueError):
    pass
