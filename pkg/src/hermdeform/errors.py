"""Exception taxonomy shared by all hermdeform modules.

Every failure mode that a caller can meaningfully react to gets its own
class; generic ``ValueError``/``RuntimeError`` are reserved for genuine
programming errors.  The command line surfaces ``ConfigError`` as exit
code 2 and every other ``HermdeformError`` as exit code 1.
"""

from __future__ import annotations

__all__ = [
    "HermdeformError",
    "ChartDomainError",
    "MetricNotPositive",
    "JetOrderError",
    "DegenerateDirection",
    "IntegrationFailure",
    "NotConverged",
    "EikonalViolation",
    "NoValidMu",
    "PositivityLost",
    "BudgetExhausted",
    "CoverageFailure",
    "CertificationError",
    "ConfigError",
]


class HermdeformError(Exception):
    """Base class for all package-specific errors."""


class ChartDomainError(HermdeformError):
    """A point lies outside the chart's fundamental domain or a requested
    ball does not fit inside the chart."""


class MetricNotPositive(HermdeformError):
    """A metric failed the positive-definiteness (or Hermiticity) gate at
    one or more sample points, or is too ill-conditioned to invert."""


class JetOrderError(HermdeformError):
    """A jet of higher order than available was requested, or two jets on
    incompatible variable sets were combined."""


class DegenerateDirection(HermdeformError):
    """A geodesic shot with a (numerically) zero initial velocity."""


class IntegrationFailure(HermdeformError):
    """The geodesic ODE integrator collapsed its step size or left the
    chart before reaching the requested arclength."""


class NotConverged(HermdeformError):
    """The boundary-value distance solver failed to reach its target
    accuracy; callers typically react by shrinking the working radius."""


class EikonalViolation(HermdeformError):
    """The squared-gradient identity of the distance field failed beyond
    tolerance at build time (bad distance convergence)."""


class NoValidMu(HermdeformError):
    """No overlap fraction on the dyadic search grid keeps the positivity
    bracket of the bump construction strictly positive."""


class PositivityLost(HermdeformError):
    """No deformation amplitude preserves the trace's non-negativity on
    the sample grid: either the grid is too coarse or the input metric
    violates the sign precondition."""


class BudgetExhausted(HermdeformError):
    """The perturbation-size budget forces the deformation amplitude
    below its strict-positivity margin floor, or the stage cap was hit
    before the covering reached every grid point."""


class CoverageFailure(HermdeformError):
    """The greedy annulus covering could not cover every sample point
    within its iteration allowance (geometry/resolution mismatch)."""


class CertificationError(HermdeformError):
    """A post-condition replay (margin check, identity residual, ...)
    failed after a deformation step was computed."""


class ConfigError(HermdeformError):
    """Malformed run configuration: unknown keys, missing sections,
    unparsable expressions, or inconsistent dimensions."""
