"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (also a ``ValueError``);
numerical failures derive from :class:`NumericalError`. The CLI maps the two
families to distinct exit codes.
"""


class SigmaStabError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SigmaStabError, ValueError):
    """Parameters violate a documented precondition."""


class OutOfRange(ValidationError):
    """Requested decay rate lies outside the admissible interval."""


class NumericalError(SigmaStabError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy answer."""


class BoundaryRoot(NumericalError):
    """A characteristic root sits on (or numerically at) the counting contour."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NonConvergence(NumericalError):
    """Adaptive refinement or iteration exhausted its budget."""


class UnboundedSpectrum(NumericalError):
    """No finite window contains every root right of the requested abscissa."""


class DegenerateDenominator(NumericalError):
    def __init__(self, sigma):
        super().__init__(f"real-root boundary denominator vanishes at sigma={sigma!r}")
        self.sigma = sigma


class SingularSystem(NumericalError):
    """The 2x2 boundary system is singular at the requested frequency."""


class NoRealRoot(NumericalError):
    """The boundary quadratic has a negative discriminant."""


class NoFeasibleRoot(NumericalError):
    """No candidate maximal decay survived the feasibility filters."""


class NoPositiveRoot(NumericalError):
    """The minimal-gain quadratic has no admissible positive root."""


class InfeasibleDifferenceOperator(NumericalError):
    """Gains violate the difference-operator stability condition."""


class NumericalBlowup(NumericalError):
    def __init__(self, step, value):
        super().__init__(f"state magnitude {value:.3e} exceeded 1e12 at step {step}")
        self.step = step
        self.value = value


class InsufficientPeaks(NumericalError):
    """Too few envelope peaks to estimate a decay rate."""
