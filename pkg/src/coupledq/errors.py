"""Exception types shared across the package."""


class CoupledQError(Exception):
    """Base class for all package errors."""


class BoundViolation(CoupledQError):
    """A rate function returned a value outside [0, bound] or a non-finite value."""


class InvalidShape(CoupledQError):
    """A sampled gain was not increasing or a sampled interference factor not decreasing."""


class NoUniformLimit(CoupledQError):
    """The saturation residual failed to drop below tolerance at the last schedule level.

    Diagnostic only: a slowly converging allocation can trip this even when the
    limit exists.  Carries the partially filled StructureReport in ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SaturationNotConverged(CoupledQError):
    """Numeric saturation escalation never stabilized within limit_tol."""


class BoxTooLarge(CoupledQError):
    """Requested truncation box exceeds the configured state-count cap."""


class SolveFailure(CoupledQError):
    """Stationary solve stagnated above the residual tolerance."""


class NoConvergence(CoupledQError):
    """Box escalation hit the cap while boundary mass was still above tail_tol.

    This is the expected signal for an unstable saturated prefix process; the
    caller maps it to a zero worst-case average rate.  Carries the last
    (uncertified) distribution and the solve report.
    """

    def __init__(self, message, distribution=None, report=None):
        super().__init__(message)
        self.distribution = distribution
        self.report = report


class DivergentSeries(CoupledQError):
    """Closed-form stationary series failed the ratio test."""


class HypothesisViolated(CoupledQError):
    """A sampled state pair broke the coupling rate hypotheses.

    Signals that the caller's inputs do not satisfy the comparison conditions,
    not a simulator bug.  Carries the offending pair and coordinate.
    """

    def __init__(self, message, x=None, y=None, coord=None):
        super().__init__(message)
        self.x = x
        self.y = y
        self.coord = coord


class PermutationCapExceeded(CoupledQError):
    """More queues than the permutation search cap allows."""


class ScenarioError(CoupledQError):
    """Scenario file failed to parse or validate."""
