"""Exception types raised across the package."""

from __future__ import annotations


class RobustQError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(RobustQError):
    """Array shapes are inconsistent with the declared sizes."""


class RowNotStochastic(RobustQError):
    """A probability row has negative mass or does not sum to one."""


class BadDiscount(RobustQError):
    """Discount factor outside the open interval (0, 1)."""


class NonFiniteInput(RobustQError):
    """An input vector contains NaN or infinity."""


class NotConverged(RobustQError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class DimensionMismatch(RobustQError):
    """Parameter vector length disagrees with the feature dimension."""


class NonFiniteTheta(RobustQError):
    """Agent parameters produced a non-finite score."""


class BadBounds(RobustQError):
    """Interval bounds are inverted."""


class BadCoefficients(RobustQError):
    """Reward coefficients violate the required ordering p < q."""


class SteppedTerminal(RobustQError):
    """A finished episode was stepped again."""


class EmptySeries(RobustQError):
    """An aggregation was requested over an empty collection."""


class InsufficientRuns(RobustQError):
    """Too few Monte Carlo runs for the requested statistic."""


class NonUniqueOptimalPolicy(RobustQError):
    """The greedy policy of Q* is not unique up to the gap tolerance."""


class NotErgodic(RobustQError):
    """The behavioral chain has no reachable stationary distribution."""


class SeriesDiverged(RobustQError):
    """The autocovariance series has a non-vanishing mean component."""


class GainBelowThreshold(RobustQError):
    """Step-size gain does not exceed the stability threshold."""


class SingularSystem(RobustQError):
    """The Lyapunov system matrix is not Hurwitz / not uniquely solvable."""


class ParseError(RobustQError):
    """Configuration file is not syntactically valid."""


class UnknownKey(RobustQError):
    """Configuration contains keys outside the schema."""

    def __init__(self, keys: list[str]):
        self.keys = list(keys)
        super().__init__("unknown config keys: " + ", ".join(self.keys))


class ValidationError(RobustQError):
    """Configuration values violate the schema; lists every offending field."""

    def __init__(self, fields: list[str]):
        self.fields = list(fields)
        super().__init__("invalid config fields: " + "; ".join(self.fields))


class EnvironmentBuildError(RobustQError):
    """The configured environment could not be constructed."""


class IoError(RobustQError):
    """Result files could not be written."""
