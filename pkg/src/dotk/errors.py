"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DegenerateSpeedError(DomainError):
    """The transport speed is zero, so alpha and h are undefined."""


class NotMonotoneError(DomainError):
    """A path or system violates the monotonicity an operation requires."""


class BoundaryDegeneracyError(ArithmeticError):
    """A zero mass carries nonzero flux; shrink to the interior time range."""


class ConditionsNotVerified(RuntimeError):
    """Preconditions of a certificate failed at the requested point."""


class NumericalInconsistency(ArithmeticError):
    """Two algebraically equal evaluations disagree beyond tolerance."""
