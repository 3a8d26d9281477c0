"""Exception hierarchy shared by the solvers, simulator and CLI."""


class DualSchedError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DualSchedError, ValueError):
    """A parameter or config field is outside its admissible range."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ZeroMassInterval(DualSchedError):
    """The requested interval carries (numerically) no probability mass."""


class NonConvergence(DualSchedError):
    """An iterative solver ran out of iterations before meeting its tolerance."""

    def __init__(self, message, residuals=None, state=None):
        self.residuals = residuals
        self.state = state
        super().__init__(message)


class NoBracket(DualSchedError):
    """Bracket expansion for a monotone root search failed."""


class AsymmetricPolicy(DualSchedError):
    """A policy that must be symmetric about the origin is not."""


class ConfigMismatch(DualSchedError):
    """A DP table was solved for a different problem than the one requested."""


class GeometryViolation(DualSchedError, ValueError):
    """Threshold geometry does not fit inside the source support."""
