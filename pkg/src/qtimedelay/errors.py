"""Exception hierarchy.

Every failure mode the library can report has its own class so callers
(and the CLI exit-code mapping) can tell them apart.
"""


class QTDError(Exception):
    """Base class for all library errors."""


class RepresentationError(QTDError):
    """State is in the wrong representation for the requested operation."""


class GridMismatchError(QTDError):
    """Two states (or a state and an operator) live on different grids."""


class TruncationError(QTDError):
    """Evolved mass leaked into the guard band of the periodic box."""


class DomainError(QTDError):
    """State fails a domain requirement (momentum mass below the velocity floor, ...)."""


class DegenerateModelError(QTDError):
    """Model parameters make every spectral point critical (e.g. zero velocity)."""


class AllCriticalError(QTDError):
    """The velocity floor exceeds every velocity on the grid."""


class PreconditionError(QTDError):
    """Generic violated precondition (window touching critical arcs, bad sizes, ...)."""


class NonConvergenceError(QTDError):
    """A strong limit did not settle within the allowed horizon.

    The Cauchy-increment trace is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FidelityError(QTDError):
    """Extracted scattering block is not unitary to the requested tolerance."""


class BranchError(QTDError):
    """Quasi-energy window is not covered by a single branch of E -> exp(-iE)."""


class InconclusiveError(QTDError):
    """A truncated sum did not converge; the tail estimate is attached as ``tail``."""

    def __init__(self, message, tail=None):
        super().__init__(message)
        self.tail = tail


class ConfigError(QTDError):
    """Invalid experiment configuration."""
