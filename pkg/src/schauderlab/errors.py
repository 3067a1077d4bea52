"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SchauderLabError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgument(SchauderLabError, ValueError):
    pass


class NoExteriorError(InvalidArgument):
    """The open set fills the whole ambient grid, so distances to its complement are undefined."""


class TooCoarseError(InvalidArgument):
    pass


class UnderResolvedError(InvalidArgument):
    pass


class DomainMarginError(InvalidArgument):
    pass


class InvalidWhitneyError(InvalidArgument):
    pass


class ConfigError(InvalidArgument):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EllipticityViolation(SchauderLabError):
    """Raised when a coefficient field fails the ellipticity predicate.

    Attributes
    ----------
    node : tuple of int
        Multi-index of the worst node.
    point : ndarray
        Coordinates of that node.
    direction : ndarray or None
        Probe direction realizing the lower-bound violation.
    margin : float
        Signed margin, negative when violated.
    bound : str
        ``"lower"`` or ``"upper"``.
    """

    def __init__(self, node, point, direction, margin, bound):
        self.node = tuple(int(i) for i in node)
        self.point = point
        self.direction = direction
        self.margin = float(margin)
        self.bound = bound
        super().__init__(
            f"ellipticity violated ({bound} bound) at node {self.node}, margin {self.margin:.6g}"
        )


class ConvergenceFailure(SchauderLabError):
    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class StoppingFailure(SchauderLabError):
    def __init__(self, message, curve=()):
        self.curve = list(curve)
        super().__init__(message)
