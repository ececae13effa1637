"""Exception hierarchy shared by all dipgeom modules."""


class DipgeomError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(DipgeomError, ValueError):
    """An input lies outside the domain of the operation."""


class UnsupportedTermError(DipgeomError, ValueError):
    """No closed form exists for the requested sensitivity term."""


class PrecisionError(DipgeomError, ValueError):
    """A finite-difference step is too coarse for the requested accuracy."""


class NoRootError(DipgeomError):
    """The bracket does not contain a sign change."""


class OverlapRiskError(DipgeomError):
    """Motional wavefunctions extend too far relative to the separation."""


class ConvergenceError(DipgeomError):
    """Quadrature results changed too much when the order was raised."""


class CollisionRiskError(DipgeomError, ValueError):
    """A displacement brings mobile and static molecules too close."""


class IntegrationError(DipgeomError):
    """The spin-dynamics integrator failed."""


class DegenerateCouplingError(DipgeomError, ValueError):
    """The requested geometry sits on the zero of the angular factor."""
