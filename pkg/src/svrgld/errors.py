"""Exception types shared across the package."""


class SvrgldError(Exception):
    """Base class for package errors."""


class InvalidInputError(SvrgldError, ValueError):
    """Raised when an argument violates an operation's preconditions."""


class InvalidConfigError(SvrgldError, ValueError):
    """Raised when a run/experiment configuration is inconsistent."""


class NotPSDError(SvrgldError, ValueError):
    """A matrix expected to be positive semidefinite has a genuinely
    negative eigenvalue (beyond round-off), which signals a covariance
    computation bug upstream rather than numerical noise."""


class NoConvergenceError(SvrgldError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class DivergedError(SvrgldError, RuntimeError):
    """An integrator state exceeded the divergence threshold, usually a
    step size violating the dissipativity regime."""
