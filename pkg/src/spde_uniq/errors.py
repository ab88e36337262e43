"""Exception types raised across the package."""


class SpdeUniqError(Exception):
    """Base class for all package errors."""


class ResonantEigenvalue(SpdeUniqError):
    """Damped block with a (near) double eigenvalue: rho^2 == 4 mu^(1 - 2 alpha)."""


class DegenerateSamples(SpdeUniqError):
    """Samples cannot support a log-log fit."""


class QuadratureFailure(SpdeUniqError):
    """Adaptive quadrature did not reach its tolerance within the panel budget."""


class UnsupportedFamily(SpdeUniqError):
    """No admissibility theorem covers the requested model family."""


class SingularQt(SpdeUniqError):
    """A controllability Gramian block is numerically singular."""


class NonFiniteState(SpdeUniqError):
    """A simulated state overflowed or became NaN."""


class IllConditionedK(SpdeUniqError):
    """The Kalman matrix [G_n | A_n G_n] is too close to singular."""


class NoContraction(SpdeUniqError):
    """Picard iteration for the Kolmogorov equation does not contract."""


class PathLeftBox(SpdeUniqError):
    """A trajectory left the grid box on which the Kolmogorov solution lives."""


class ConfigError(SpdeUniqError):
    """Invalid or unreadable experiment configuration."""
